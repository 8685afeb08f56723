#include "spnn/nlbp.hpp"

#include <cmath>
#include <stdexcept>

namespace spnn::nlbp {

void AttributeStats::validate() const {
    const std::size_t n = mu.size();
    if (sigma.size() != n || cov.rows != n || cov.cols != n)
        throw std::invalid_argument("AttributeStats: inconsistent shapes");
    for (std::size_t i = 0; i < n; ++i) {
        if (cov.at(i, i) < -1e-12)
            throw std::invalid_argument("AttributeStats: negative variance");
        if (std::abs(sigma[i] * sigma[i] - cov.at(i, i)) > 1e-8)
            throw std::invalid_argument("AttributeStats: sigma^2 != diag(cov)");
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(cov.at(i, j) - cov.at(j, i)) > 1e-10)
                throw std::invalid_argument("AttributeStats: covariance not symmetric");
    }
}

Vec nlbp_exact(const SpnnModel& m, const Vec& x, const Vec& y, const PinvMode& mode) {
    CompletionPoint gx = completion(m, x);
    CompletionPoint g_cur = completion(m, pinv(m, gx.range, mode));
    CompletionPoint g_tgt = completion(m, pinv(m, y, mode));
    CompletionPoint moved;
    moved.range = linalg::add(linalg::sub(gx.range, g_cur.range), g_tgt.range);
    moved.null = linalg::add(linalg::sub(gx.null, g_cur.null), g_tgt.null);
    return completion_inverse(m, moved);
}

Vec nlbp_gentle(const SpnnModel& m, const Vec& x, const Vec& y, double lambda,
                const PinvMode& mode) {
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("nlbp_gentle: lambda must be in [0, 1]");
    CompletionPoint gx = completion(m, x);
    CompletionPoint g_cur = completion(m, pinv(m, gx.range, mode));
    CompletionPoint g_tgt = completion(m, pinv(m, y, mode));
    CompletionPoint moved = gx;
    linalg::axpy(lambda, linalg::sub(g_tgt.range, g_cur.range), moved.range);
    linalg::axpy(lambda, linalg::sub(g_tgt.null, g_cur.null), moved.null);
    return completion_inverse(m, moved);
}

Vec nlbp_naive(const SpnnModel& m, const Vec& x, const Vec& y, const PinvMode& mode) {
    Vec gx = model_forward(m, x);
    Vec step = linalg::sub(pinv(m, y, mode), pinv(m, gx, mode));
    return linalg::add(x, step);
}

double adaptive_lambda(double delta_n, double alpha, double gamma) {
    if (alpha <= 0.0 || alpha > 1.0 || gamma <= 0.0)
        throw std::invalid_argument("adaptive_lambda: need alpha in (0,1], gamma > 0");
    return alpha * std::tanh(gamma * delta_n);
}

Vec dynamic_target(const Vec& y_cur, std::size_t n, const AttributeStats& stats) {
    if (n >= y_cur.size() || n >= stats.count())
        throw std::out_of_range("dynamic_target: attribute index out of range");
    Vec y = y_cur;
    y[n] = stats.mu[n] + 2.0 * stats.sigma[n];
    return y;
}

Vec covariance_adjust(double delta_n, std::size_t n, const AttributeStats& stats) {
    if (n >= stats.count())
        throw std::out_of_range("covariance_adjust: attribute index out of range");
    const double var_n = stats.cov.at(n, n);
    if (var_n <= 1e-12)
        throw std::invalid_argument("covariance_adjust: degenerate variance at index n");
    Vec delta(stats.count(), 0.0);
    for (std::size_t j = 0; j < stats.count(); ++j)
        delta[j] = stats.cov.at(j, n) / var_n * delta_n;
    delta[n] = delta_n;
    return delta;
}

}  // namespace spnn::nlbp
