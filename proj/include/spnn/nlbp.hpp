#pragma once

#include "spnn/model.hpp"

namespace spnn::nlbp {

using linalg::Mat;
using linalg::Vec;

struct AttributeStats {
    Vec mu;     // per-attribute mean
    Vec sigma;  // per-attribute std
    Mat cov;    // full covariance

    std::size_t count() const { return mu.size(); }
    void validate() const;  // symmetry, non-negative diagonal, sigma^2 == diag
};

enum class BpKind { Exact, Gentle, Naive };

struct NlbpConfig {
    double lambda = 0.8;  // in [0, 1]
    bool adaptive = false;
    double alpha = 0.8;  // adaptive cap
    double gamma = 2.0;  // adaptive slope
    std::size_t guidance_start_t = 0;
    PinvMode pinv_mode = PinvMode::natural();
    BpKind kind = BpKind::Gentle;
    bool delta_in_logit_space = false;  // default: probability space
};

// x' = G^{-1}( G(x) - G(g+(g(x))) + G(g+(y)) ): lands exactly on the
// pre-image of y for any reflexive pseudo-inverse mode.
Vec nlbp_exact(const SpnnModel& m, const Vec& x, const Vec& y, const PinvMode& mode);

// x' = G^{-1}( G(x) + lambda [ G(g+(y)) - G(g+(g(x))) ] ):
// g(x') = (1-lambda) g(x) + lambda y; in natural mode q(x') = q(x).
Vec nlbp_gentle(const SpnnModel& m, const Vec& x, const Vec& y, double lambda,
                const PinvMode& mode);

// Ablation baseline, additive in input space: x + g+(y) - g+(g(x)).
// Not consistency-preserving for non-linear g; that gap is its point.
Vec nlbp_naive(const SpnnModel& m, const Vec& x, const Vec& y, const PinvMode& mode);

// alpha * tanh(gamma * delta): monotone in delta, capped at alpha.
double adaptive_lambda(double delta_n, double alpha, double gamma);

// Copy of y_cur with index n forced to mu_n + 2 sigma_n.
Vec dynamic_target(const Vec& y_cur, std::size_t n, const AttributeStats& stats);

// Full adjustment vector: delta[n] = delta_n, delta[j] = (cov_jn/cov_nn) delta_n.
Vec covariance_adjust(double delta_n, std::size_t n, const AttributeStats& stats);

}  // namespace spnn::nlbp
