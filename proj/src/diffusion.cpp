#include "spnn/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "spnn/parallel.hpp"

namespace spnn::diffusion {

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start,
                                            double beta_end) {
    if (steps < 2 || beta_start <= 0.0 || beta_end >= 1.0 || beta_end < beta_start)
        throw std::invalid_argument("DiffusionSchedule: bad parameters");
    DiffusionSchedule s;
    s.steps = steps;
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    double bar = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        s.betas[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                      static_cast<double>(steps - 1);
        s.alphas[t] = 1.0 - s.betas[t];
        bar *= s.alphas[t];
        s.alpha_bars[t] = bar;
    }
    return s;
}

Vec q_sample(const Vec& x0, std::size_t t, const Vec& noise, const DiffusionSchedule& sched) {
    if (t >= sched.steps)
        throw std::invalid_argument("q_sample: t out of range");
    if (noise.size() != x0.size())
        throw std::invalid_argument("q_sample: noise dim mismatch");
    const double ab = sched.alpha_bars[t];
    const double c0 = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
    Vec x(x0.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = c0 * x0[i] + cn * noise[i];
    return x;
}

Vec predict_x0(const Vec& x_t, std::size_t t, const Vec& eps_hat,
               const DiffusionSchedule& sched) {
    if (t >= sched.steps)
        throw std::invalid_argument("predict_x0: t out of range");
    if (eps_hat.size() != x_t.size())
        throw std::invalid_argument("predict_x0: eps dim mismatch");
    const double ab = sched.alpha_bars[t];
    const double inv = 1.0 / std::sqrt(ab), cn = std::sqrt(1.0 - ab);
    Vec x0(x_t.size());
    for (std::size_t i = 0; i < x0.size(); ++i)
        x0[i] = (x_t[i] - cn * eps_hat[i]) * inv;
    return x0;
}

Vec time_travel(const Vec& x_t, std::size_t t, std::size_t length,
                const DiffusionSchedule& sched, Rng& rng) {
    if (length == 0)
        return x_t;
    if (t + length >= sched.steps)
        throw std::invalid_argument("time_travel: t + length out of range");
    // q(x_{t+len} | x_t): marginal at index i is alpha_bars[i]
    const double ratio = sched.alpha_bars[t + length] / sched.alpha_bars[t];
    const double c = std::sqrt(ratio), cn = std::sqrt(1.0 - ratio);
    Vec out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = c * x_t[i] + cn * rng.normal();
    return out;
}

Denoiser Denoiser::make(std::size_t data_dim, const DenoiserConfig& cfg,
                        const DiffusionSchedule& sched, Rng& rng) {
    if (cfg.emb_dim % 2 != 0)
        throw std::invalid_argument("Denoiser: emb_dim must be even");
    Denoiser d;
    d.data_dim = data_dim;
    d.emb_dim = cfg.emb_dim;
    d.sched = sched;
    std::vector<std::size_t> dims;
    dims.push_back(data_dim + cfg.emb_dim);
    for (std::size_t i = 0; i < cfg.depth; ++i)
        dims.push_back(cfg.width);
    dims.push_back(data_dim);
    d.net = nn::Mlp::make(dims, nn::Act::Tanh, nn::Head::Linear, rng);
    return d;
}

Vec Denoiser::time_embedding(std::size_t t) const {
    Vec emb(emb_dim);
    const std::size_t half = emb_dim / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        emb[2 * k] = std::sin(static_cast<double>(t) * freq);
        emb[2 * k + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return emb;
}

Vec Denoiser::predict_eps(const Vec& x_t, std::size_t t) const {
    if (x_t.size() != data_dim)
        throw std::invalid_argument("predict_eps: dim mismatch");
    Vec in = x_t;
    Vec emb = time_embedding(t);
    in.insert(in.end(), emb.begin(), emb.end());
    return nn::mlp_forward(net, in);
}

namespace {

struct EpsAccum {
    linalg::ExactSum loss;
    nn::MlpGrads grads;
};

struct NoisedSample {
    Vec input;  // x_t ++ emb(t)
    Vec eps;
};

NoisedSample make_noised(const Denoiser& den, const Vec& x0, std::size_t t, Rng& rng) {
    NoisedSample ns;
    ns.eps.resize(x0.size());
    rng.fill_normal(ns.eps);
    Vec xt = q_sample(x0, t, ns.eps, den.sched);
    ns.input = std::move(xt);
    Vec emb = den.time_embedding(t);
    ns.input.insert(ns.input.end(), emb.begin(), emb.end());
    return ns;
}

double eps_batch_loss(const Denoiser& den, const std::vector<NoisedSample>& batch,
                      nn::MlpGrads* grads_out) {
    const double bsz = static_cast<double>(batch.size());
    const double dim = static_cast<double>(den.data_dim);
    linalg::ExactSum total;
    nn::MlpGrads grads = nn::MlpGrads::zeros_like(den.net);
    chunked_reduce(
        batch.size(), kReduceChunks,
        [&] { return EpsAccum{linalg::ExactSum{}, nn::MlpGrads::zeros_like(den.net)}; },
        [&](EpsAccum& acc, std::size_t i) {
            nn::MlpTape tape;
            Vec pred = nn::mlp_forward(den.net, batch[i].input, grads_out ? &tape : nullptr);
            double l = 0.0;
            Vec up(pred.size());
            for (std::size_t j = 0; j < pred.size(); ++j) {
                const double d = pred[j] - batch[i].eps[j];
                l += d * d / dim;
                up[j] = 2.0 * d / (dim * bsz);
            }
            acc.loss.add(l);
            if (grads_out)
                nn::mlp_backward(den.net, tape, up, &acc.grads);
        },
        [&](EpsAccum& acc) {
            total.add(acc.loss);
            grads.add(acc.grads);
        });
    if (grads_out)
        *grads_out = std::move(grads);
    return total.value() / bsz;
}

}  // namespace

DenoiserMetrics train_denoiser(Denoiser& den, const data::Dataset& ds,
                               const DenoiserConfig& cfg) {
    if (ds.n < 10)
        throw std::invalid_argument("train_denoiser: dataset too small");
    DenoiserMetrics metrics;
    const std::size_t val_n = std::max<std::size_t>(1, ds.n / 10);
    const std::size_t train_n = ds.n - val_n;

    nn::AdamConfig acfg{cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip};
    nn::Adam opt(den.net.param_count(), acfg);
    Vec params(den.net.param_count());
    den.net.get_params(params.data());

    Rng rng(cfg.seed);
    // fixed validation batch: one noised copy of each held-out sample
    Rng val_rng = rng.split();
    std::vector<NoisedSample> val_batch;
    for (std::size_t i = train_n; i < ds.n; ++i) {
        const std::size_t t = val_rng.uniform_index(den.sched.steps);
        val_batch.push_back(make_noised(den, ds.sample(i), t, val_rng));
    }

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // sampled with replacement; fresh noise every epoch
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < train_n; begin += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, train_n - begin);
            std::vector<NoisedSample> batch;
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t i = rng.uniform_index(train_n);
                const std::size_t t = rng.uniform_index(den.sched.steps);
                batch.push_back(make_noised(den, ds.sample(i), t, rng));
            }
            nn::MlpGrads grads = nn::MlpGrads::zeros_like(den.net);
            epoch_loss += eps_batch_loss(den, batch, &grads);
            ++batches;
            Vec flat(den.net.param_count());
            grads.flatten(flat.data());
            opt.step(params, flat);
            den.net.set_params(params.data());
        }
        metrics.train_loss.push_back(epoch_loss / static_cast<double>(batches));
        metrics.val_loss.push_back(eps_batch_loss(den, val_batch, nullptr));
        if (!std::isfinite(metrics.train_loss.back()))
            throw std::runtime_error("train_denoiser: diverged at epoch " +
                                     std::to_string(epoch));
    }
    return metrics;
}

GuidanceRule GuidanceRule::fixed(Vec y) {
    GuidanceRule r;
    r.kind = Kind::Static;
    r.target = std::move(y);
    return r;
}

GuidanceRule GuidanceRule::attribute_edit(std::size_t n, nlbp::AttributeStats stats,
                                          bool use_covariance) {
    GuidanceRule r;
    r.kind = Kind::DynamicAttribute;
    r.attribute = n;
    r.stats = std::move(stats);
    r.use_covariance = use_covariance;
    return r;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::size_t> timestep_grid(std::size_t horizon, std::size_t points) {
    if (points < 2)
        throw std::invalid_argument("sample_guided: need at least 2 sampling steps");
    points = std::min(points, horizon);
    std::vector<std::size_t> grid;
    for (std::size_t i = 0; i < points; ++i) {
        const double frac =
            static_cast<double>(points - 1 - i) / static_cast<double>(points - 1);
        const auto t = static_cast<std::size_t>(
            std::llround(frac * static_cast<double>(horizon - 1)));
        if (grid.empty() || t < grid.back())
            grid.push_back(t);
    }
    return grid;  // strictly decreasing, ends at 0
}

}  // namespace

SampleResult sample_guided(const Denoiser& den, const SpnnModel& m, const GuidanceRule& rule,
                           const SamplerConfig& cfg, std::uint64_t seed) {
    if (m.input_dim != den.data_dim)
        throw std::invalid_argument(
            "sample_guided: model input dim and denoiser data dim differ");
    const DiffusionSchedule& sched = den.sched;
    const std::vector<std::size_t> grid = timestep_grid(sched.steps, cfg.sampling_steps);
    const std::size_t repeats = std::max<std::size_t>(1, cfg.travel_repeat);

    SampleResult result;
    Rng rng(seed);
    Vec x(den.data_dim);
    rng.fill_normal(x);

    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const std::size_t t = grid[gi];
        const bool final_step = gi + 1 == grid.size();
        const std::size_t t_prev = final_step ? 0 : grid[gi + 1];
        const double ab_cur = sched.alpha_bars[t];
        const double ab_prev = final_step ? 1.0 : sched.alpha_bars[t_prev];

        for (std::size_t rep = 0; rep < repeats; ++rep) {
            Vec eps = den.predict_eps(x, t);
            Vec x0hat = predict_x0(x, t, eps, sched);
            if (!linalg::all_finite(x0hat))
                throw std::runtime_error("sample_guided: non-finite state at t = " +
                                         std::to_string(t));

            // guidance window
            if (rule.kind != GuidanceRule::Kind::None && t <= cfg.guidance_start_t) {
                Vec y_t;
                double lambda_t = cfg.nlbp.lambda;
                if (rule.kind == GuidanceRule::Kind::Static) {
                    y_t = rule.target;
                } else {
                    Vec y_cur = model_forward(m, x0hat);
                    if (rule.use_covariance) {
                        const double want =
                            rule.stats.mu[rule.attribute] + 2.0 * rule.stats.sigma[rule.attribute];
                        const double delta_n = want - y_cur[rule.attribute];
                        Vec adj = nlbp::covariance_adjust(delta_n, rule.attribute, rule.stats);
                        y_t = linalg::add(y_cur, adj);
                    } else {
                        y_t = nlbp::dynamic_target(y_cur, rule.attribute, rule.stats);
                    }
                    if (cfg.nlbp.adaptive) {
                        const double delta =
                            cfg.nlbp.delta_in_logit_space
                                ? std::abs(y_cur[rule.attribute] - y_t[rule.attribute])
                                : std::abs(sigmoid(y_cur[rule.attribute]) -
                                           sigmoid(y_t[rule.attribute]));
                        lambda_t = nlbp::adaptive_lambda(delta, cfg.nlbp.alpha, cfg.nlbp.gamma);
                    }
                }

                if (lambda_t > 0.0) {
                    Vec x0ref = x0hat;
                    switch (cfg.nlbp.kind) {
                        case nlbp::BpKind::Gentle:
                            x0hat = nlbp::nlbp_gentle(m, x0ref, y_t, lambda_t,
                                                      cfg.nlbp.pinv_mode);
                            break;
                        case nlbp::BpKind::Exact:
                            x0hat = nlbp::nlbp_exact(m, x0ref, y_t, cfg.nlbp.pinv_mode);
                            lambda_t = 1.0;
                            break;
                        case nlbp::BpKind::Naive:
                            x0hat = nlbp::nlbp_naive(m, x0ref, y_t, cfg.nlbp.pinv_mode);
                            break;
                    }
                    if (!linalg::all_finite(x0hat))
                        throw std::runtime_error(
                            "sample_guided: non-finite state after projection at t = " +
                            std::to_string(t));

                    StepMetric sm;
                    sm.t = t;
                    sm.lambda = lambda_t;
                    Vec g_new = model_forward(m, x0hat);
                    sm.residual = linalg::norm2(linalg::sub(g_new, y_t));
                    CompletionPoint before = completion(m, x0ref);
                    CompletionPoint after = completion(m, x0hat);
                    sm.null_drift = linalg::norm2(linalg::sub(after.null, before.null));
                    result.steps.push_back(sm);

                    if (cfg.online_checks && cfg.nlbp.kind == nlbp::BpKind::Gentle) {
                        // interpolation contract on the range component
                        const Vec& g_old = before.range;
                        for (std::size_t j = 0; j < g_new.size(); ++j) {
                            const double want =
                                (1.0 - lambda_t) * g_old[j] + lambda_t * y_t[j];
                            if (std::abs(g_new[j] - want) >
                                1e-6 * std::max(1.0, std::abs(want)))
                                throw std::runtime_error(
                                    "sample_guided: interpolation contract violated at t = " +
                                    std::to_string(t));
                        }
                        if (cfg.nlbp.pinv_mode.kind == PinvMode::Kind::Natural &&
                            sm.null_drift > 1e-7 * std::max(1.0, linalg::norm2(before.null)))
                            throw std::runtime_error(
                                "sample_guided: null invariance violated at t = " +
                                std::to_string(t));
                    }
                }
            }

            // ancestral step with FixedSmall posterior variance
            const double alpha_eff = ab_cur / ab_prev;
            const double beta_eff = 1.0 - alpha_eff;
            const double c0 = std::sqrt(ab_prev) * beta_eff / (1.0 - ab_cur);
            const double ct = std::sqrt(alpha_eff) * (1.0 - ab_prev) / (1.0 - ab_cur);
            const double var = beta_eff * (1.0 - ab_prev) / (1.0 - ab_cur);
            Vec x_next(x.size());
            for (std::size_t i = 0; i < x.size(); ++i)
                x_next[i] = c0 * x0hat[i] + ct * x[i];
            if (!final_step) {
                const double sd = std::sqrt(std::max(0.0, var));
                for (auto& v : x_next)
                    v += sd * rng.normal();
            }

            if (rep + 1 < repeats) {
                // re-noise back to t and redo the segment; travel_length
                // scales in grid segments, clamped to the schedule
                std::size_t up = t_prev + cfg.travel_length * (t - t_prev);
                up = std::min(std::max(up, t), sched.steps - 1);
                x = time_travel(x_next, t_prev, up - t_prev, sched, rng);
            } else {
                x = std::move(x_next);
            }
        }
    }
    result.x0 = std::move(x);
    return result;
}

}  // namespace spnn::diffusion
