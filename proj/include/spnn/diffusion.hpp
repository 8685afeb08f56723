#pragma once

#include <cstdint>
#include <vector>

#include "spnn/data.hpp"
#include "spnn/nlbp.hpp"
#include "spnn/nn.hpp"

namespace spnn::diffusion {

using linalg::Vec;

struct DiffusionSchedule {
    std::size_t steps = 100;  // T
    Vec betas;                // linear beta_start..beta_end
    Vec alphas;               // 1 - beta
    Vec alpha_bars;           // running product

    static DiffusionSchedule linear(std::size_t steps, double beta_start, double beta_end);
    // T = 100 with the 1000-step [1e-4, 2e-2] ramp rescaled x10 so the total
    // injected noise matches.
    static DiffusionSchedule desk_default() { return linear(100, 1e-3, 2e-1); }
};

Vec q_sample(const Vec& x0, std::size_t t, const Vec& noise, const DiffusionSchedule& sched);
Vec predict_x0(const Vec& x_t, std::size_t t, const Vec& eps_hat, const DiffusionSchedule& sched);

// Re-noise x_t forward by `length` raw timesteps with marginal-consistent
// noise, so a trajectory segment can be resampled.
Vec time_travel(const Vec& x_t, std::size_t t, std::size_t length, const DiffusionSchedule& sched,
                Rng& rng);

struct DenoiserConfig {
    std::size_t width = 128;
    std::size_t depth = 3;
    std::size_t emb_dim = 16;
    std::size_t epochs = 40;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double grad_clip = 1.0;
    std::uint64_t seed = 556;
};

// epsilon-prediction MLP over [x_t | sinusoidal t embedding]
struct Denoiser {
    nn::Mlp net;
    std::size_t data_dim = 0;
    std::size_t emb_dim = 16;
    DiffusionSchedule sched;

    static Denoiser make(std::size_t data_dim, const DenoiserConfig& cfg,
                         const DiffusionSchedule& sched, Rng& rng);
    Vec time_embedding(std::size_t t) const;
    Vec predict_eps(const Vec& x_t, std::size_t t) const;
};

struct DenoiserMetrics {
    std::vector<double> train_loss;  // per epoch, per-element mean
    std::vector<double> val_loss;
};

// Minimizes the per-element mean of ||eps - eps_theta(x_t, t)||^2; the last
// tenth of the dataset is held out for the validation curve.
DenoiserMetrics train_denoiser(Denoiser& den, const data::Dataset& ds,
                               const DenoiserConfig& cfg);

// ---- guided sampling (the restoration loop) ----

struct GuidanceRule {
    enum class Kind { None, Static, DynamicAttribute };
    Kind kind = Kind::None;
    Vec target;                // Static
    std::size_t attribute = 0;  // DynamicAttribute
    bool use_covariance = false;
    nlbp::AttributeStats stats;  // logit-space stats for the dynamic rule

    static GuidanceRule none() { return {}; }
    static GuidanceRule fixed(Vec y);
    static GuidanceRule attribute_edit(std::size_t n, nlbp::AttributeStats stats,
                                       bool use_covariance);
};

struct SamplerConfig {
    std::size_t sampling_steps = 50;     // subsampled grid size
    std::size_t guidance_start_t = 80;   // apply NLBP when t <= this
    std::size_t travel_length = 1;       // raw steps per re-noise pass
    std::size_t travel_repeat = 1;       // denoise passes per grid segment
    nlbp::NlbpConfig nlbp;
    bool online_checks = true;  // per-step interpolation/null-invariance contracts
};

struct StepMetric {
    std::size_t t = 0;
    double lambda = 0.0;
    double residual = 0.0;    // ||g(x0') - y_t||
    double null_drift = 0.0;  // ||q(x0') - q(x0)||
};

struct SampleResult {
    Vec x0;
    std::vector<StepMetric> steps;
};

// Ancestral DDPM over the subsampled grid with FixedSmall posterior variance;
// NLBP applied to the clean estimate inside the guidance window. A rule of
// Kind::None (or lambda 0) consumes the identical noise stream, so unguided
// and guidance-disabled runs are bit-identical.
SampleResult sample_guided(const Denoiser& den, const SpnnModel& m, const GuidanceRule& rule,
                           const SamplerConfig& cfg, std::uint64_t seed);

}  // namespace spnn::diffusion
