#pragma once

#include <cstdint>
#include <vector>

#include "spnn/data.hpp"
#include "spnn/model.hpp"

namespace spnn::train {

using linalg::Vec;

struct TrainConfig {
    std::size_t phase1_epochs = 15;
    std::size_t phase2_epochs = 50;
    std::size_t batch_size = 64;
    double lr = 2e-4;
    double lr_r = 1e-4;
    double lambda_task = 1.0;
    double lambda_surj = 40.0;
    double lambda_stab = 40.0;
    double lambda_natural = 0.3;
    double lambda_r_surj = 1.0;
    double lambda_r_stab = 1.0;
    std::size_t warmup_iters = 200;
    double grad_clip = 1.0;
    std::uint64_t seed = 556;
    // phase-1 stop: task loss moved less than this for 3 consecutive epochs
    double plateau_tol = 1e-4;
};

enum class TaskKind { Mse, CrossEntropy };

struct LossValue {
    double value = 0.0;
    ModelGrads grads;
};

// Mean task loss over the batch (per-element for MSE, per-bit sigmoid
// cross-entropy otherwise). Gradients flow into {s, t, U} only.
LossValue loss_task(const SpnnModel& m, const std::vector<Vec>& xs,
                    const std::vector<Vec>& targets, TaskKind kind);

// mean ||y - g(g+(y))||^2, learned-r route; structurally zero, measures
// accumulated rounding. Gradient flows through both g and g+.
LossValue loss_surjectivity(const SpnnModel& m, const std::vector<Vec>& ys);

// mean ||x - g+(g(x))||^2, learned-r route.
LossValue loss_stability(const SpnnModel& m, const std::vector<Vec>& xs);

// mean ||G(g+(y)) - G(0)||^2, learned-r route. The range part is constant in
// r, so only the null term is differentiated; returned grads touch r only.
LossValue loss_natural(const SpnnModel& m, const std::vector<Vec>& ys);

// mean over blocks and samples of ||r_b(input) - q(0) slice|| — the distance
// phase II is supposed to shrink.
double mean_r_gap(const SpnnModel& m, const std::vector<Vec>& ys);

struct EpochMetrics {
    int phase = 0;
    std::size_t epoch = 0;
    double loss_task = 0.0;
    double loss_surj = 0.0;
    double loss_stab = 0.0;
    double loss_natural = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
};

// Fraction of (sample, attribute) pairs where sign(g(x)) matches the label.
double attribute_accuracy(const SpnnModel& m, const data::Dataset& ds);

// Phase I: task + auxiliary losses over {s, t, U}; r trails along on the
// auxiliary losses at lr_r. Aborts (restoring the last epoch's parameters)
// if the loss goes non-finite.
TrainResult train_phase1(SpnnModel& m, const data::Dataset& ds, const TrainConfig& cfg);

// Phase II: natural + auxiliary losses over r only; forward parameters are
// checksummed before and after — any drift is a hard failure. y batches are
// g(x) of the provided samples (the stability term needs the x side too).
TrainResult train_phase2(SpnnModel& m, const std::vector<Vec>& xs, const TrainConfig& cfg);

}  // namespace spnn::train
