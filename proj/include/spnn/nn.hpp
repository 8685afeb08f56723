#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "spnn/linalg.hpp"
#include "spnn/rng.hpp"

namespace spnn::nn {

using linalg::Mat;
using linalg::Vec;

enum class Act { Tanh, Relu };

// scale head: exp(2*tanh(z)), elementwise, output in [e^-2, e^2]
enum class Head { Linear, Scale };

struct Mlp {
    std::vector<std::size_t> dims;  // layer widths, input first
    std::vector<Mat> w;             // w[l]: dims[l+1] x dims[l]
    std::vector<Vec> b;
    Act hidden = Act::Tanh;
    Head head = Head::Linear;
    std::uint64_t version = 0;  // bumped on set_params; tapes record it

    static Mlp make(std::vector<std::size_t> dims, Act hidden, Head head, Rng& rng);
    static Mlp zeros(std::vector<std::size_t> dims, Act hidden, Head head);

    std::size_t in_dim() const { return dims.front(); }
    std::size_t out_dim() const { return dims.back(); }
    std::size_t layer_count() const { return w.size(); }
    std::size_t param_count() const;
    void get_params(double* out) const;
    void set_params(const double* in);
};

struct MlpTape {
    Vec input;
    std::vector<Vec> pre;     // pre-activation of each layer
    std::vector<Vec> hidden;  // post-activation of hidden layers
    Vec output;
    std::uint64_t version = 0;
};

// Gradients in the same layout as the net; backward accumulates (+=).
struct MlpGrads {
    std::vector<Mat> w;
    std::vector<Vec> b;

    static MlpGrads zeros_like(const Mlp& net);
    void add(const MlpGrads& other);
    std::size_t flatten(double* out) const;  // returns count written
};

Vec mlp_forward(const Mlp& net, const Vec& x, MlpTape* tape = nullptr);

// Returns gradient w.r.t. the input; parameter gradients are accumulated
// into `grads` when non-null. Throws on a tape from a stale parameter set.
Vec mlp_backward(const Mlp& net, const MlpTape& tape, const Vec& upstream,
                 MlpGrads* grads = nullptr);

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global norm; <= 0 disables
};

struct Adam {
    AdamConfig cfg;
    Vec m, v;
    std::int64_t steps = 0;

    Adam(std::size_t n, AdamConfig c) : cfg(c), m(n, 0.0), v(n, 0.0) {}

    // Standard bias-corrected update; the gradient is clipped to cfg.grad_clip
    // by global norm first. lr_scale multiplies cfg.lr (warmup). Throws on a
    // non-finite gradient.
    void step(std::span<double> params, std::span<const double> grads, double lr_scale = 1.0);
};

// f(params, grad_out): returns the loss; fills grad_out (same length as
// params) when non-null.
using DiffFn = std::function<double(std::span<const double>, double*)>;

// Compares f's analytic gradient against central differences and returns the
// worst relative error. probe_limit > 0 checks a deterministic random subset
// of coordinates of that size.
double gradient_check(const DiffFn& f, Vec params, double eps, std::size_t probe_limit = 0,
                      std::uint64_t probe_seed = 0);

}  // namespace spnn::nn
