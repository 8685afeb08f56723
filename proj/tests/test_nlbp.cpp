#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spnn/data.hpp"
#include "spnn/nlbp.hpp"

using namespace spnn;
using namespace spnn::nlbp;
using linalg::Mat;
using linalg::Vec;

namespace {

SpnnModel desk_model(std::uint64_t seed = 556) {
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    Rng rng(seed);
    return SpnnModel::make_flat(10, {5, 3}, init, rng);
}

SpnnModel linear_model(std::uint64_t seed = 7) {
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    init.zero_st = true;
    Rng rng(seed);
    return SpnnModel::make_flat(10, {5, 3}, init, rng);
}

}  // namespace

TEST_CASE("nlbp_exact: fixed point, consistency in every mode, natural null invariance") {
    SpnnModel m = desk_model();
    Rng rng(1);
    Vec zc(m.null_dim());
    rng.fill_normal(zc);
    const PinvMode modes[] = {PinvMode::learned(), PinvMode::natural(), PinvMode::constant(zc),
                              PinvMode::random_r()};

    for (const auto& mode : modes) {
        for (int c = 0; c < 100; ++c) {
            Vec x(m.input_dim), y(m.output_dim);
            rng.fill_normal(x);
            rng.fill_normal(y);
            // consistency: g(x') = y for any reflexive pseudo-inverse
            Vec xp = nlbp_exact(m, x, y, mode);
            CHECK(linalg::norm_inf(linalg::sub(model_forward(m, xp), y)) < 1e-7);
            // fixed point at y = g(x)
            Vec gx = model_forward(m, x);
            Vec fixed = nlbp_exact(m, x, gx, mode);
            CHECK(linalg::norm_inf(linalg::sub(fixed, x)) < 1e-8);
        }
    }

    // natural mode: the null coordinates do not move
    for (int c = 0; c < 100; ++c) {
        Vec x(m.input_dim), y(m.output_dim);
        rng.fill_normal(x);
        rng.fill_normal(y);
        Vec xp = nlbp_exact(m, x, y, PinvMode::natural());
        CompletionPoint before = completion(m, x), after = completion(m, xp);
        CHECK(linalg::norm_inf(linalg::sub(after.null, before.null)) < 1e-8);
    }
}

TEST_CASE("nlbp_exact equals linear back-projection on the linear model") {
    SpnnModel m = linear_model();
    Mat a = induced_linear_matrix(m);
    Rng rng(2);
    for (int c = 0; c < 100; ++c) {
        Vec x(m.input_dim), y(m.output_dim);
        rng.fill_normal(x);
        rng.fill_normal(y);
        Vec xp = nlbp_exact(m, x, y, PinvMode::natural());
        Vec lbp = linalg::linear_back_project(x, y, a);
        CHECK(linalg::norm_inf(linalg::sub(xp, lbp)) < 1e-8);
    }
}

TEST_CASE("nlbp_gentle: endpoints, interpolation contract, null invariance") {
    SpnnModel m = desk_model();
    Rng rng(3);
    Vec x(m.input_dim), y(m.output_dim);
    rng.fill_normal(x);
    rng.fill_normal(y);

    Vec x0 = nlbp_gentle(m, x, y, 0.0, PinvMode::natural());
    CHECK(linalg::norm_inf(linalg::sub(x0, x)) < 1e-9);

    Vec x1 = nlbp_gentle(m, x, y, 1.0, PinvMode::natural());
    Vec xe = nlbp_exact(m, x, y, PinvMode::natural());
    CHECK(linalg::norm_inf(linalg::sub(x1, xe)) < 1e-9);

    Vec gx = model_forward(m, x);
    for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        Vec xl = nlbp_gentle(m, x, y, lambda, PinvMode::natural());
        Vec gl = model_forward(m, xl);
        for (std::size_t j = 0; j < gl.size(); ++j)
            CHECK(std::abs(gl[j] - ((1.0 - lambda) * gx[j] + lambda * y[j])) < 1e-7);
        // null coordinates untouched
        CompletionPoint before = completion(m, x), after = completion(m, xl);
        CHECK(linalg::norm_inf(linalg::sub(after.null, before.null)) < 1e-7);
    }

    // midpoint: range exactly halfway
    Vec xm = nlbp_gentle(m, x, y, 0.5, PinvMode::natural());
    Vec gm = model_forward(m, xm);
    for (std::size_t j = 0; j < gm.size(); ++j)
        CHECK(gm[j] == doctest::Approx(0.5 * gx[j] + 0.5 * y[j]).epsilon(1e-9));

    CHECK_THROWS_AS(nlbp_gentle(m, x, y, 1.5, PinvMode::natural()), std::invalid_argument);
}

TEST_CASE("nlbp_naive: coincides with exact on the pure slicing model, misses otherwise") {
    // zero mixers + zero s,t + r == 0: G is the identity permutation
    SpnnModel m = linear_model();
    for (auto& st : m.stages)
        if (auto* b = std::get_if<SurjectiveBlock>(&st)) {
            std::fill(b->mixer.params.begin(), b->mixer.params.end(), 0.0);
            b->r_net = nn::Mlp::zeros(b->r_net.dims, nn::Act::Tanh, nn::Head::Linear);
        }
    m.refresh();
    Rng rng(4);
    Vec x(m.input_dim), y(m.output_dim);
    rng.fill_normal(x);
    rng.fill_normal(y);
    Vec naive = nlbp_naive(m, x, y, PinvMode::learned());
    Vec exact = nlbp_exact(m, x, y, PinvMode::learned());
    CHECK(linalg::norm_inf(linalg::sub(naive, exact)) < 1e-10);

    // random nonlinear model: residual typically far from zero (recorded)
    SpnnModel nl = desk_model();
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        rng.fill_normal(x);
        rng.fill_normal(y);
        Vec xp = nlbp_naive(nl, x, y, PinvMode::natural());
        worst = std::max(worst,
                         linalg::norm2(linalg::sub(model_forward(nl, xp), y)));
    }
    CHECK(worst > 1e-2);
}

TEST_CASE("adaptive_lambda") {
    CHECK(adaptive_lambda(0.0, 0.8, 2.0) == 0.0);
    CHECK(adaptive_lambda(1e9, 0.8, 2.0) == doctest::Approx(0.8));
    CHECK(adaptive_lambda(1.0, 0.8, 1.0) == doctest::Approx(0.8 * std::tanh(1.0)).epsilon(1e-12));

    // monotone on a 100-point grid
    double prev = -1.0;
    for (int i = 0; i < 100; ++i) {
        const double d = 0.05 * i;
        const double l = adaptive_lambda(d, 0.8, 2.0);
        CHECK(l >= prev);
        CHECK(l <= 0.8);
        prev = l;
    }
    CHECK_THROWS_AS(adaptive_lambda(1.0, 0.0, 2.0), std::invalid_argument);
}

TEST_CASE("dynamic_target and covariance_adjust") {
    AttributeStats st;
    st.mu = {0.0, 1.0, -1.0};
    st.sigma = {1.0, 0.5, 2.0};
    st.cov = Mat(3, 3);
    st.cov.at(0, 0) = 1.0;
    st.cov.at(1, 1) = 0.25;
    st.cov.at(2, 2) = 4.0;

    Vec y{0.3, -0.2, 0.9};
    Vec t = dynamic_target(y, 0, st);
    CHECK(t[0] == doctest::Approx(2.0));  // mu 0, sigma 1 -> 2
    CHECK(t[1] == y[1]);
    CHECK(t[2] == y[2]);
    // exactly one entry differs
    int changed = 0;
    for (std::size_t i = 0; i < 3; ++i)
        changed += (t[i] != y[i]) ? 1 : 0;
    CHECK(changed == 1);

    // already satisfied attribute: unchanged
    Vec sat{2.0, 0.0, 0.0};
    CHECK(dynamic_target(sat, 0, st) == sat);
    CHECK_THROWS_AS(dynamic_target(y, 9, st), std::out_of_range);

    // diagonal covariance: only index n moves
    Vec d = covariance_adjust(0.7, 2, st);
    CHECK(d[2] == doctest::Approx(0.7));
    CHECK(d[0] == 0.0);
    CHECK(d[1] == 0.0);

    // perfectly correlated pair adjusts equally
    AttributeStats coupled = st;
    coupled.cov.at(0, 1) = coupled.cov.at(1, 0) = 0.25;  // == cov_11
    Vec e = covariance_adjust(0.4, 1, coupled);
    CHECK(e[0] == doctest::Approx(0.4));
    CHECK(e[1] == doctest::Approx(0.4));

    AttributeStats degen = st;
    degen.cov.at(0, 0) = 0.0;
    degen.sigma[0] = 0.0;
    CHECK_THROWS_AS(covariance_adjust(0.1, 0, degen), std::invalid_argument);
}

TEST_CASE("covariance_adjust matches a regression-slope oracle on sampled data") {
    // slope of attribute j on attribute n from raw samples == cov_jn / cov_nn
    Rng rng(5);
    data::SyntheticSpec spec = data::SyntheticSpec::desk_default();
    data::Dataset ds = data::generate(spec, 20000, 42);
    AttributeStats st = data::attribute_stats(ds);

    const std::size_t n = spec.pair.first, j = spec.pair.second;
    // least-squares slope of label_j on label_n
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < ds.n; ++i) {
        const double xn = ds.label(i, n) - st.mu[n];
        const double xj = ds.label(i, j) - st.mu[j];
        sxx += xn * xn;
        sxy += xn * xj;
    }
    const double slope = sxy / sxx;
    Vec d = covariance_adjust(1.0, n, st);
    CHECK(d[j] == doctest::Approx(slope).epsilon(1e-9));
    (void)rng;
}
