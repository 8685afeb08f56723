#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spnn/losses.hpp"

using namespace spnn;
using namespace spnn::train;
using linalg::Vec;

namespace {

SpnnModel desk_model(std::uint64_t seed = 556) {
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    Rng rng(seed);
    return SpnnModel::make_flat(10, {5, 3}, init, rng);
}

std::vector<Vec> random_batch(std::size_t n, std::size_t dim, Rng& rng) {
    std::vector<Vec> xs(n, Vec(dim));
    for (auto& x : xs)
        rng.fill_normal(x);
    return xs;
}

// gradient check over the forward parameters only (r held fixed)
double check_fwd_grads(const SpnnModel& m,
                       const std::function<LossValue(const SpnnModel&)>& loss,
                       std::uint64_t probe_seed) {
    const std::size_t nf = m.forward_param_count();
    nn::DiffFn f = [&](std::span<const double> p, double* grad_out) {
        SpnnModel local = m;
        local.set_forward_params(p.data());
        LossValue lv = loss(local);
        if (grad_out)
            lv.grads.flatten_forward(local, grad_out);
        return lv.value;
    };
    Vec params(nf);
    m.get_forward_params(params.data());
    return nn::gradient_check(f, params, 1e-5, 250, probe_seed);
}

// gradient check over the r parameters only (forward held fixed)
double check_r_grads(const SpnnModel& m,
                     const std::function<LossValue(const SpnnModel&)>& loss,
                     std::uint64_t probe_seed) {
    const std::size_t nr = m.r_param_count();
    nn::DiffFn f = [&](std::span<const double> p, double* grad_out) {
        SpnnModel local = m;
        local.set_r_params(p.data());
        LossValue lv = loss(local);
        if (grad_out)
            lv.grads.flatten_r(grad_out);
        return lv.value;
    };
    Vec params(nr);
    m.get_r_params(params.data());
    return nn::gradient_check(f, params, 1e-5, 250, probe_seed);
}

}  // namespace

TEST_CASE("loss_task values: perfect MSE, ln2 cross-entropy, mean under duplication") {
    SpnnModel m = desk_model();
    Rng rng(1);
    std::vector<Vec> xs = random_batch(4, m.input_dim, rng);
    std::vector<Vec> perfect;
    for (const auto& x : xs)
        perfect.push_back(model_forward(m, x));
    CHECK(loss_task(m, xs, perfect, TaskKind::Mse).value == doctest::Approx(0.0));

    // zero logits vs binary targets: per-bit cross-entropy is ln 2.
    // zero_st model with zero mixers emits a slice of x; feed zero inputs.
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    init.zero_st = true;
    Rng mk(2);
    SpnnModel zm = SpnnModel::make_flat(6, {2}, init, mk);
    std::vector<Vec> zx = {Vec(6, 0.0)};
    std::vector<Vec> zt = {{1.0, 0.0}};
    CHECK(loss_task(zm, zx, zt, TaskKind::CrossEntropy).value ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // duplicating the batch leaves the mean unchanged
    std::vector<Vec> targets;
    for (const auto& x : xs) {
        Vec t(m.output_dim);
        rng.fill_normal(t);
        targets.push_back(t);
        (void)x;
    }
    LossValue once = loss_task(m, xs, targets, TaskKind::Mse);
    std::vector<Vec> xs2 = xs, t2 = targets;
    xs2.insert(xs2.end(), xs.begin(), xs.end());
    t2.insert(t2.end(), targets.begin(), targets.end());
    LossValue twice = loss_task(m, xs2, t2, TaskKind::Mse);
    CHECK(once.value == doctest::Approx(twice.value).epsilon(1e-15));
}

TEST_CASE("loss values are exactly invariant under batch permutation") {
    SpnnModel m = desk_model();
    Rng rng(2);
    std::vector<Vec> xs = random_batch(9, m.input_dim, rng);
    std::vector<Vec> rev(xs.rbegin(), xs.rend());
    CHECK(loss_stability(m, xs).value == loss_stability(m, rev).value);

    std::vector<Vec> ys = random_batch(9, m.output_dim, rng);
    std::vector<Vec> yrev(ys.rbegin(), ys.rend());
    CHECK(loss_surjectivity(m, ys).value == loss_surjectivity(m, yrev).value);
    CHECK(loss_natural(m, ys).value == loss_natural(m, yrev).value);
}

TEST_CASE("loss_surjectivity is rounding-level small, including at y = 0") {
    SpnnModel m = desk_model();
    Rng rng(3);
    std::vector<Vec> ys = random_batch(32, m.output_dim, rng);
    CHECK(loss_surjectivity(m, ys).value < 1e-10);

    std::vector<Vec> zero = {Vec(m.output_dim, 0.0)};
    CHECK(loss_surjectivity(m, zero).value < 1e-14);

    // single block
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    Rng mk(4);
    SpnnModel one = SpnnModel::make_flat(6, {3}, init, mk);
    std::vector<Vec> ys1 = random_batch(16, 3, rng);
    CHECK(loss_surjectivity(one, ys1).value < 1e-14);
}

TEST_CASE("loss_stability: zero on the natural section, ||b||^2 on the slicing model") {
    SpnnModel m = desk_model();
    Rng rng(5);
    // points on the natural section are fixed points of g+ o g in natural
    // mode; in learned mode they are not, so build the check with constant z
    std::vector<Vec> xs;
    for (int c = 0; c < 8; ++c) {
        Vec y(m.output_dim);
        rng.fill_normal(y);
        xs.push_back(pinv(m, y, PinvMode::natural()));
    }
    // natural-section stability: ||x - G^{-1}([g(x) | q0])||^2 == 0; evaluate
    // through the exact-mode reconstruction rather than the learned one
    for (const auto& x : xs) {
        Vec back = pinv(m, model_forward(m, x), PinvMode::natural());
        CHECK(linalg::norm2(linalg::sub(back, x)) < 1e-10);
    }

    // pure slicing model with r == 0: residual is exactly the discarded part
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    init.zero_st = true;
    Rng mk(6);
    SpnnModel sl = SpnnModel::make_flat(6, {2}, init, mk);
    for (auto& st : sl.stages)
        if (auto* b = std::get_if<SurjectiveBlock>(&st)) {
            std::fill(b->mixer.params.begin(), b->mixer.params.end(), 0.0);
            b->r_net = nn::Mlp::zeros(b->r_net.dims, nn::Act::Tanh, nn::Head::Linear);
        }
    sl.refresh();
    std::vector<Vec> sx = {{1.0, 2.0, 3.0, 4.0, 5.0, 6.0}};
    const double expect = 9.0 + 16.0 + 25.0 + 36.0;  // ||(3,4,5,6)||^2
    CHECK(loss_stability(sl, sx).value == doctest::Approx(expect).epsilon(1e-12));

    // non-negative always
    std::vector<Vec> rx = random_batch(16, m.input_dim, rng);
    CHECK(loss_stability(m, rx).value >= 0.0);
}

TEST_CASE("loss_natural: closed form is the global minimizer") {
    SpnnModel m = desk_model();
    Rng rng(7);
    std::vector<Vec> ys = random_batch(16, m.output_dim, rng);

    // value with r == per-block q(0) slices: the r-dependent term vanishes.
    // Emulate by measuring the natural-mode completion directly.
    linalg::ExactSum natural_total;
    for (const auto& y : ys) {
        CompletionPoint cp = completion(m, pinv(m, y, PinvMode::natural()));
        double l = 0.0;
        for (std::size_t j = 0; j < cp.range.size(); ++j) {
            const double d = cp.range[j] - m.origin_range()[j];
            l += d * d;
        }
        for (std::size_t j = 0; j < cp.null.size(); ++j) {
            const double d = cp.null[j] - m.natural_null()[j];
            l += d * d;
        }
        natural_total.add(l);
    }
    const double natural_value = natural_total.value() / static_cast<double>(ys.size());
    const double learned_value = loss_natural(m, ys).value;
    CHECK(natural_value <= learned_value + 1e-12);

    // random r is strictly worse than the natural mode
    CHECK(learned_value > natural_value + 1e-6);
}

TEST_CASE("gradient fidelity: every trainable loss path") {
    SpnnModel m = desk_model(99);
    Rng rng(8);
    std::vector<Vec> xs = random_batch(3, m.input_dim, rng);
    std::vector<Vec> ys = random_batch(3, m.output_dim, rng);
    std::vector<Vec> targets;
    for (int i = 0; i < 3; ++i) {
        Vec t(m.output_dim);
        for (auto& v : t)
            v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        targets.push_back(t);
    }

    CHECK(check_fwd_grads(
              m, [&](const SpnnModel& lm) { return loss_task(lm, xs, targets, TaskKind::Mse); },
              11) < 1e-4);
    CHECK(check_fwd_grads(
              m,
              [&](const SpnnModel& lm) {
                  return loss_task(lm, xs, targets, TaskKind::CrossEntropy);
              },
              12) < 1e-4);
    CHECK(check_fwd_grads(
              m, [&](const SpnnModel& lm) { return loss_stability(lm, xs); }, 13) < 1e-4);
    CHECK(check_r_grads(
              m, [&](const SpnnModel& lm) { return loss_stability(lm, xs); }, 14) < 1e-4);
    CHECK(check_r_grads(
              m, [&](const SpnnModel& lm) { return loss_natural(lm, ys); }, 15) < 1e-4);
}

TEST_CASE("train_phase1: zero epochs no-op, determinism") {
    data::SyntheticSpec spec = data::SyntheticSpec::desk_default();
    data::Dataset ds = data::generate(spec, 96, 12);

    SpnnInit init;
    init.hidden_width = 16;
    init.hidden_depth = 2;
    Rng mk(20);
    SpnnModel m = SpnnModel::make_flat(16, {8, 4}, init, mk);

    TrainConfig cfg;
    cfg.phase1_epochs = 0;
    const std::uint64_t before = m.forward_checksum();
    TrainResult r = train_phase1(m, ds, cfg);
    CHECK(r.metrics.empty());
    CHECK(m.forward_checksum() == before);

    auto run = [&](std::uint64_t seed) {
        Rng mk2(20);
        SpnnModel mm = SpnnModel::make_flat(16, {8, 4}, init, mk2);
        TrainConfig c;
        c.phase1_epochs = 2;
        c.batch_size = 32;
        c.seed = seed;
        train_phase1(mm, ds, c);
        Vec p(mm.forward_param_count());
        mm.get_forward_params(p.data());
        return p;
    };
    Vec a = run(556), b = run(556);
    CHECK(a == b);
}

TEST_CASE("non-finite values abort with diagnostics") {
    SpnnModel m = desk_model();
    std::vector<Vec> bad = {Vec(m.input_dim, std::numeric_limits<double>::infinity())};
    std::vector<Vec> t = {Vec(m.output_dim, 0.0)};
    CHECK_THROWS_AS(loss_task(m, bad, t, TaskKind::Mse), std::runtime_error);
}

TEST_CASE("train_phase1 divergence restores the last good parameters") {
    data::SyntheticSpec spec = data::SyntheticSpec::desk_default();
    data::Dataset ds = data::generate(spec, 64, 3);
    SpnnInit init;
    init.hidden_width = 8;
    Rng mk(9);
    SpnnModel m = SpnnModel::make_flat(16, {8, 4}, init, mk);

    TrainConfig cfg;
    cfg.phase1_epochs = 1;
    cfg.batch_size = 32;
    cfg.lr = 1e-3;
    TrainResult one = train_phase1(m, ds, cfg);
    REQUIRE(one.metrics.size() == 1);
    Vec good(m.forward_param_count());
    m.get_forward_params(good.data());

    TrainConfig wild = cfg;
    wild.phase1_epochs = 8;
    wild.lr = 1e200;      // guaranteed blow-up
    wild.grad_clip = 0.0;  // clipping off
    wild.warmup_iters = 0;
    CHECK_THROWS_AS(train_phase1(m, ds, wild), std::runtime_error);
    // parameters rolled back to the last finite epoch boundary
    Vec after(m.forward_param_count());
    m.get_forward_params(after.data());
    CHECK(linalg::all_finite(after));
    CHECK(after == good);
}

TEST_CASE("train_phase2: freeze contract, pure-natural convergence direction") {
    data::SyntheticSpec spec = data::SyntheticSpec::desk_default();
    data::Dataset ds = data::generate(spec, 256, 13);
    std::vector<Vec> xs;
    for (std::size_t i = 0; i < ds.n; ++i)
        xs.push_back(ds.sample(i));

    SpnnInit init;
    init.hidden_width = 16;
    init.hidden_depth = 2;
    Rng mk(21);
    SpnnModel m = SpnnModel::make_flat(16, {8, 4}, init, mk);

    std::vector<Vec> ys;
    for (const auto& x : xs)
        ys.push_back(model_forward(m, x));
    const double gap_before = mean_r_gap(m, ys);

    TrainConfig cfg;
    cfg.phase2_epochs = 6;
    cfg.batch_size = 32;
    cfg.lambda_r_surj = 0.0;
    cfg.lambda_r_stab = 0.0;
    cfg.lr_r = 1e-3;  // fast lane for the unit test; acceptance uses the slow one
    cfg.warmup_iters = 20;
    const std::uint64_t frozen = m.forward_checksum();
    TrainResult r = train_phase2(m, xs, cfg);
    CHECK(m.forward_checksum() == frozen);
    CHECK(r.metrics.size() == 6);
    const double gap_after = mean_r_gap(m, ys);
    CHECK(gap_after < gap_before);
    // the natural loss itself also dropped
    CHECK(r.metrics.back().loss_natural < r.metrics.front().loss_natural);

    // zero epochs: unchanged
    SpnnModel m2 = m;
    Vec rp_before(m2.r_param_count());
    m2.get_r_params(rp_before.data());
    TrainConfig zero = cfg;
    zero.phase2_epochs = 0;
    train_phase2(m2, xs, zero);
    Vec rp_after(m2.r_param_count());
    m2.get_r_params(rp_after.data());
    CHECK(rp_before == rp_after);
}
