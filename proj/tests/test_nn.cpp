#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spnn/nn.hpp"
#include "spnn/rng.hpp"

using namespace spnn;
using namespace spnn::nn;
using linalg::Vec;

TEST_CASE("rng determinism and split independence") {
    Rng a(556), b(556);
    for (int i = 0; i < 100; ++i)
        CHECK(a.next_u64() == b.next_u64());

    Rng c(556);
    for (int i = 0; i < 100; ++i)
        c.uniform();
    Rng child = c.split();
    Rng c2(556);
    for (int i = 0; i < 100; ++i)
        c2.uniform();
    Rng child2 = c2.split();
    for (int i = 0; i < 10; ++i)
        CHECK(child.next_u64() == child2.next_u64());

    // crude distribution sanity for normal(): mean ~ 0, var ~ 1
    Rng d(1);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = d.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("mlp forward hand cases") {
    // zero-weight net, linear head -> zero output
    Mlp lin = Mlp::zeros({3, 4, 2}, Act::Tanh, Head::Linear);
    Vec y = mlp_forward(lin, {1.0, -2.0, 0.5});
    CHECK(y == Vec{0.0, 0.0});

    // zero-weight net with scale head -> all ones (exp(2 tanh 0) = 1)
    Mlp sc = Mlp::zeros({3, 4, 2}, Act::Tanh, Head::Scale);
    y = mlp_forward(sc, {1.0, -2.0, 0.5});
    CHECK(y[0] == doctest::Approx(1.0));
    CHECK(y[1] == doctest::Approx(1.0));

    // single linear layer: Wx + b
    Mlp one = Mlp::zeros({2, 2}, Act::Tanh, Head::Linear);
    one.w[0].at(0, 0) = 1.0;
    one.w[0].at(0, 1) = 2.0;
    one.w[0].at(1, 0) = -1.0;
    one.b[0] = {0.5, 0.25};
    y = mlp_forward(one, {3.0, 4.0});
    CHECK(y[0] == doctest::Approx(3.0 + 8.0 + 0.5));
    CHECK(y[1] == doctest::Approx(-3.0 + 0.25));

    CHECK_THROWS_AS(mlp_forward(one, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("scale head stays in [e^-2, e^2] for huge inputs") {
    Rng rng(3);
    Mlp sc = Mlp::make({2, 8, 3}, Act::Tanh, Head::Scale, rng);
    Vec y = mlp_forward(sc, {1e6, -1e6});
    for (double v : y) {
        CHECK(v >= std::exp(-2.0));
        CHECK(v <= std::exp(2.0));
        CHECK(v > 0.0);
    }
}

TEST_CASE("mlp backward: hand case and zero upstream") {
    // y = tanh(w x), w = 0.5, x = 1, upstream = 1: dw = x (1 - tanh^2(0.5)).
    // Realized as a 1-1-1 net with identity-ish output layer.
    Mlp net = Mlp::zeros({1, 1, 1}, Act::Tanh, Head::Linear);
    net.w[0].at(0, 0) = 0.5;
    net.w[1].at(0, 0) = 1.0;
    MlpTape tape;
    Vec y = mlp_forward(net, {1.0}, &tape);
    CHECK(y[0] == doctest::Approx(std::tanh(0.5)));
    MlpGrads g = MlpGrads::zeros_like(net);
    mlp_backward(net, tape, {1.0}, &g);
    const double th = std::tanh(0.5);
    CHECK(g.w[0].at(0, 0) == doctest::Approx(1.0 * (1.0 - th * th)).epsilon(1e-12));

    MlpGrads gz = MlpGrads::zeros_like(net);
    mlp_backward(net, tape, {0.0}, &gz);
    CHECK(gz.w[0].at(0, 0) == 0.0);
    CHECK(gz.w[1].at(0, 0) == 0.0);
    CHECK(gz.b[0][0] == 0.0);
}

TEST_CASE("mlp backward matches finite differences on random nets") {
    Rng rng(5);
    for (Head head : {Head::Linear, Head::Scale}) {
        Mlp net = Mlp::make({4, 16, 16, 3}, Act::Tanh, head, rng);
        Vec x(4), up(3);
        rng.fill_normal(x);
        rng.fill_normal(up);

        DiffFn f = [&](std::span<const double> p, double* grad_out) {
            Mlp local = net;
            local.set_params(p.data());
            MlpTape tape;
            Vec y = mlp_forward(local, x, &tape);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i)
                loss += up[i] * y[i];
            if (grad_out) {
                MlpGrads g = MlpGrads::zeros_like(local);
                mlp_backward(local, tape, up, &g);
                g.flatten(grad_out);
            }
            return loss;
        };
        Vec params(net.param_count());
        net.get_params(params.data());
        CHECK(gradient_check(f, params, 1e-5) < 1e-5);
    }
}

TEST_CASE("mlp input gradient matches finite differences") {
    Rng rng(6);
    Mlp net = Mlp::make({5, 12, 2}, Act::Tanh, Head::Linear, rng);
    Vec x(5), up(2);
    rng.fill_normal(x);
    rng.fill_normal(up);
    MlpTape tape;
    mlp_forward(net, x, &tape);
    Vec din = mlp_backward(net, tape, up);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += eps;
        xm[i] -= eps;
        double fp = linalg::dot(mlp_forward(net, xp), up);
        double fm = linalg::dot(mlp_forward(net, xm), up);
        CHECK(std::abs(din[i] - (fp - fm) / (2 * eps)) < 1e-6);
    }
}

TEST_CASE("stale tape is rejected") {
    Rng rng(7);
    Mlp net = Mlp::make({2, 4, 1}, Act::Tanh, Head::Linear, rng);
    MlpTape tape;
    mlp_forward(net, {0.1, 0.2}, &tape);
    Vec p(net.param_count());
    net.get_params(p.data());
    net.set_params(p.data());  // version bump, values unchanged
    CHECK_THROWS_AS(mlp_backward(net, tape, {1.0}), std::runtime_error);
}

TEST_CASE("adam: zero grad, first-step size, clipping") {
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.grad_clip = 0.0;  // off
    Adam opt(1, cfg);
    Vec p{2.0};
    opt.step(p, Vec{0.0});
    CHECK(p[0] == 2.0);

    Adam opt2(1, cfg);
    Vec p2{2.0};
    opt2.step(p2, Vec{1.0});
    CHECK(p2[0] == doctest::Approx(2.0 - 0.1).epsilon(1e-6));  // mhat/sqrt(vhat) = 1

    AdamConfig clip_cfg;
    clip_cfg.lr = 0.0;  // isolate the clip: check via moments
    clip_cfg.grad_clip = 1.0;
    Adam opt3(2, clip_cfg);
    Vec p3{0.0, 0.0};
    Vec g{6.0, 8.0};  // norm 10 -> scaled to norm 1
    opt3.step(p3, g);
    const double m_norm = std::sqrt(opt3.m[0] * opt3.m[0] + opt3.m[1] * opt3.m[1]);
    CHECK(m_norm == doctest::Approx((1.0 - clip_cfg.beta1) * 1.0).epsilon(1e-9));

    Adam opt4(1, cfg);
    Vec p4{0.0};
    CHECK_THROWS_AS(opt4.step(p4, Vec{std::nan("")}), std::runtime_error);
}

TEST_CASE("adam trajectories are deterministic under the same seed") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Mlp net = Mlp::make({3, 8, 1}, Act::Tanh, Head::Linear, rng);
        AdamConfig cfg;
        cfg.lr = 1e-2;
        Adam opt(net.param_count(), cfg);
        Vec params(net.param_count());
        net.get_params(params.data());
        for (int step = 0; step < 100; ++step) {
            net.set_params(params.data());
            Vec x(3);
            rng.fill_normal(x);
            MlpTape tape;
            Vec y = mlp_forward(net, x, &tape);
            MlpGrads g = MlpGrads::zeros_like(net);
            mlp_backward(net, tape, {2.0 * (y[0] - 1.0)}, &g);
            Vec flat(net.param_count());
            g.flatten(flat.data());
            opt.step(params, flat);
        }
        return params;
    };
    Vec a = run(556), b = run(556);
    CHECK(a == b);  // bit-identical
}

TEST_CASE("gradient_check basics") {
    // quadratic ||p||^2: exact gradient 2p
    DiffFn quad = [](std::span<const double> p, double* g) {
        double v = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            v += p[i] * p[i];
            if (g)
                g[i] = 2.0 * p[i];
        }
        return v;
    };
    CHECK(gradient_check(quad, {0.3, -1.2, 0.7}, 1e-5) < 1e-9);

    DiffFn constant = [](std::span<const double> p, double* g) {
        if (g)
            for (std::size_t i = 0; i < p.size(); ++i)
                g[i] = 0.0;
        return 3.5;
    };
    CHECK(gradient_check(constant, {1.0, 2.0}, 1e-5) == 0.0);

    CHECK_THROWS_AS(gradient_check(quad, {1.0}, 1e-2), std::invalid_argument);
}
