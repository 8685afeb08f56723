#include "spnn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spnn::nn {

Mlp Mlp::make(std::vector<std::size_t> dims, Act hidden, Head head, Rng& rng) {
    if (dims.size() < 2)
        throw std::invalid_argument("Mlp: need at least input and output dims");
    Mlp net;
    net.dims = std::move(dims);
    net.hidden = hidden;
    net.head = head;
    for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
        const std::size_t fan_in = net.dims[l], fan_out = net.dims[l + 1];
        Mat wl(fan_out, fan_in);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        rng.fill_uniform(wl.data, -bound, bound);
        net.w.push_back(std::move(wl));
        net.b.emplace_back(fan_out, 0.0);
    }
    return net;
}

Mlp Mlp::zeros(std::vector<std::size_t> dims, Act hidden, Head head) {
    Mlp net;
    net.dims = std::move(dims);
    net.hidden = hidden;
    net.head = head;
    for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
        net.w.emplace_back(net.dims[l + 1], net.dims[l]);
        net.b.emplace_back(net.dims[l + 1], 0.0);
    }
    return net;
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w.size(); ++l)
        n += w[l].data.size() + b[l].size();
    return n;
}

void Mlp::get_params(double* out) const {
    for (std::size_t l = 0; l < w.size(); ++l) {
        out = std::copy(w[l].data.begin(), w[l].data.end(), out);
        out = std::copy(b[l].begin(), b[l].end(), out);
    }
}

void Mlp::set_params(const double* in) {
    for (std::size_t l = 0; l < w.size(); ++l) {
        std::copy(in, in + w[l].data.size(), w[l].data.begin());
        in += w[l].data.size();
        std::copy(in, in + b[l].size(), b[l].begin());
        in += b[l].size();
    }
    ++version;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
    MlpGrads g;
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        g.w.emplace_back(net.w[l].rows, net.w[l].cols);
        g.b.emplace_back(net.b[l].size(), 0.0);
    }
    return g;
}

void MlpGrads::add(const MlpGrads& other) {
    for (std::size_t l = 0; l < w.size(); ++l) {
        for (std::size_t i = 0; i < w[l].data.size(); ++i)
            w[l].data[i] += other.w[l].data[i];
        for (std::size_t i = 0; i < b[l].size(); ++i)
            b[l][i] += other.b[l][i];
    }
}

std::size_t MlpGrads::flatten(double* out) const {
    double* p = out;
    for (std::size_t l = 0; l < w.size(); ++l) {
        p = std::copy(w[l].data.begin(), w[l].data.end(), p);
        p = std::copy(b[l].begin(), b[l].end(), p);
    }
    return static_cast<std::size_t>(p - out);
}

namespace {

double act_fwd(Act a, double z) { return a == Act::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0); }

double act_grad(Act a, double z, double out) {
    if (a == Act::Tanh)
        return 1.0 - out * out;
    return z > 0.0 ? 1.0 : 0.0;
}

}  // namespace

Vec mlp_forward(const Mlp& net, const Vec& x, MlpTape* tape) {
    if (x.size() != net.in_dim())
        throw std::invalid_argument("mlp_forward: input dim mismatch");
    if (tape) {
        *tape = MlpTape{};
        tape->input = x;
        tape->version = net.version;
    }
    Vec cur = x;
    const std::size_t layers = net.layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
        Vec z = linalg::matvec(net.w[l], cur);
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] += net.b[l][i];
        if (tape)
            tape->pre.push_back(z);
        if (l + 1 < layers) {
            for (auto& zi : z)
                zi = act_fwd(net.hidden, zi);
            if (tape)
                tape->hidden.push_back(z);
        } else if (net.head == Head::Scale) {
            for (auto& zi : z)
                zi = std::exp(2.0 * std::tanh(zi));
        }
        cur = std::move(z);
    }
    if (tape)
        tape->output = cur;
    return cur;
}

Vec mlp_backward(const Mlp& net, const MlpTape& tape, const Vec& upstream, MlpGrads* grads) {
    if (tape.version != net.version)
        throw std::runtime_error("mlp_backward: tape is stale (parameters changed)");
    if (upstream.size() != net.out_dim())
        throw std::invalid_argument("mlp_backward: upstream dim mismatch");

    const std::size_t layers = net.layer_count();
    Vec delta = upstream;  // gradient w.r.t. current layer pre-activation
    if (net.head == Head::Scale) {
        const Vec& z = tape.pre.back();
        for (std::size_t i = 0; i < delta.size(); ++i) {
            const double th = std::tanh(z[i]);
            delta[i] *= tape.output[i] * 2.0 * (1.0 - th * th);
        }
    }
    for (std::size_t li = layers; li-- > 0;) {
        const Vec& in = (li == 0) ? tape.input : tape.hidden[li - 1];
        if (grads) {
            Mat& gw = grads->w[li];
            Vec& gb = grads->b[li];
            for (std::size_t i = 0; i < gw.rows; ++i) {
                const double d = delta[i];
                gb[i] += d;
                for (std::size_t j = 0; j < gw.cols; ++j)
                    gw.at(i, j) += d * in[j];
            }
        }
        Vec din = linalg::matvec_t(net.w[li], delta);
        if (li > 0) {
            const Vec& z = tape.pre[li - 1];
            const Vec& out = tape.hidden[li - 1];
            for (std::size_t i = 0; i < din.size(); ++i)
                din[i] *= act_grad(net.hidden, z[i], out[i]);
        }
        delta = std::move(din);
    }
    return delta;
}

void Adam::step(std::span<double> params, std::span<const double> grads, double lr_scale) {
    if (params.size() != m.size() || grads.size() != m.size())
        throw std::invalid_argument("Adam::step: size mismatch");
    double sq = 0.0;
    for (double g : grads) {
        if (!std::isfinite(g))
            throw std::runtime_error("Adam::step: non-finite gradient");
        sq += g * g;
    }
    double clip_scale = 1.0;
    const double gnorm = std::sqrt(sq);
    if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip)
        clip_scale = cfg.grad_clip / gnorm;

    ++steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps));
    const double lr = cfg.lr * lr_scale;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] * clip_scale;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

double gradient_check(const DiffFn& f, Vec params, double eps, std::size_t probe_limit,
                      std::uint64_t probe_seed) {
    if (eps < 1e-7 || eps > 1e-3)
        throw std::invalid_argument("gradient_check: eps out of [1e-7, 1e-3]");
    Vec analytic(params.size(), 0.0);
    f(params, analytic.data());

    std::vector<std::size_t> coords;
    if (probe_limit == 0 || probe_limit >= params.size()) {
        coords.resize(params.size());
        for (std::size_t i = 0; i < coords.size(); ++i)
            coords[i] = i;
    } else {
        Rng rng(probe_seed ^ 0xc0ffee);
        for (std::size_t k = 0; k < probe_limit; ++k)
            coords.push_back(static_cast<std::size_t>(rng.uniform_index(params.size())));
    }

    double worst = 0.0;
    for (std::size_t i : coords) {
        const double saved = params[i];
        params[i] = saved + eps;
        const double fp = f(params, nullptr);
        params[i] = saved - eps;
        const double fm = f(params, nullptr);
        params[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace spnn::nn
