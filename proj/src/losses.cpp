#include "spnn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "spnn/parallel.hpp"

namespace spnn::train {

namespace {

struct Accum {
    linalg::ExactSum loss;
    ModelGrads grads;
};

// Batch reduction over per-sample closures; fixed chunk grid keeps results
// bit-identical for any thread count, exact summation keeps the value
// invariant under batch permutation.
template <class PerSample>
LossValue batch_loss(const SpnnModel& m, std::size_t n, PerSample&& per_sample) {
    linalg::ExactSum total;
    ModelGrads grads = ModelGrads::zeros_like(m);
    chunked_reduce(
        n, kReduceChunks,
        [&] {
            return Accum{linalg::ExactSum{}, ModelGrads::zeros_like(m)};
        },
        [&](Accum& acc, std::size_t i) { per_sample(acc, i); },
        [&](Accum& acc) {
            total.add(acc.loss);
            grads.add(acc.grads);
        });
    LossValue lv;
    lv.value = total.value() / static_cast<double>(n);
    lv.grads = std::move(grads);
    if (!std::isfinite(lv.value))
        throw std::runtime_error("loss: non-finite value");
    return lv;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

LossValue loss_task(const SpnnModel& m, const std::vector<Vec>& xs,
                    const std::vector<Vec>& targets, TaskKind kind) {
    if (xs.size() != targets.size() || xs.empty())
        throw std::invalid_argument("loss_task: batch mismatch");
    const double batch = static_cast<double>(xs.size());
    const double dim = static_cast<double>(m.output_dim);
    const Vec zero_null(m.null_dim(), 0.0);
    return batch_loss(m, xs.size(), [&](Accum& acc, std::size_t i) {
        ModelForwardTape tape;
        CompletionPoint cp = completion(m, xs[i], &tape);
        const Vec& y = cp.range;
        const Vec& t = targets[i];
        double l = 0.0;
        Vec up(y.size());
        if (kind == TaskKind::Mse) {
            for (std::size_t j = 0; j < y.size(); ++j) {
                const double d = y[j] - t[j];
                l += d * d / dim;
                up[j] = 2.0 * d / (dim * batch);
            }
        } else {
            for (std::size_t j = 0; j < y.size(); ++j) {
                l += (softplus(y[j]) - t[j] * y[j]) / dim;
                up[j] = (sigmoid(y[j]) - t[j]) / (dim * batch);
            }
        }
        acc.loss.add(l);
        completion_backward(m, tape, up, zero_null, &acc.grads);
    });
}

LossValue loss_surjectivity(const SpnnModel& m, const std::vector<Vec>& ys) {
    if (ys.empty())
        throw std::invalid_argument("loss_surjectivity: empty batch");
    const double batch = static_cast<double>(ys.size());
    const Vec zero_null(m.null_dim(), 0.0);
    return batch_loss(m, ys.size(), [&](Accum& acc, std::size_t i) {
        ModelPinvTape ptape;
        Vec u = pinv(m, ys[i], PinvMode::learned(), &ptape);
        ModelForwardTape ftape;
        CompletionPoint cp = completion(m, u, &ftape);
        double l = 0.0;
        Vec up(cp.range.size());
        for (std::size_t j = 0; j < cp.range.size(); ++j) {
            const double d = cp.range[j] - ys[i][j];
            l += d * d;
            up[j] = 2.0 * d / batch;
        }
        acc.loss.add(l);
        Vec du = completion_backward(m, ftape, up, zero_null, &acc.grads);
        pinv_backward(m, ptape, du, &acc.grads);
    });
}

LossValue loss_stability(const SpnnModel& m, const std::vector<Vec>& xs) {
    if (xs.empty())
        throw std::invalid_argument("loss_stability: empty batch");
    const double batch = static_cast<double>(xs.size());
    const Vec zero_null(m.null_dim(), 0.0);
    return batch_loss(m, xs.size(), [&](Accum& acc, std::size_t i) {
        ModelForwardTape ftape;
        CompletionPoint cp = completion(m, xs[i], &ftape);
        ModelPinvTape ptape;
        Vec xhat = pinv(m, cp.range, PinvMode::learned(), &ptape);
        double l = 0.0;
        Vec up(xhat.size());
        for (std::size_t j = 0; j < xhat.size(); ++j) {
            const double d = xhat[j] - xs[i][j];
            l += d * d;
            up[j] = 2.0 * d / batch;
        }
        acc.loss.add(l);
        Vec dy = pinv_backward(m, ptape, up, &acc.grads);
        completion_backward(m, ftape, dy, zero_null, &acc.grads);
    });
}

LossValue loss_natural(const SpnnModel& m, const std::vector<Vec>& ys) {
    if (ys.empty())
        throw std::invalid_argument("loss_natural: empty batch");
    const double batch = static_cast<double>(ys.size());
    const Vec& q0 = m.natural_null();
    const Vec& g0 = m.origin_range();
    const Vec zero_range(m.output_dim, 0.0);
    LossValue lv = batch_loss(m, ys.size(), [&](Accum& acc, std::size_t i) {
        ModelPinvTape ptape;
        Vec u = pinv(m, ys[i], PinvMode::learned(), &ptape);
        ModelForwardTape ftape;
        CompletionPoint cp = completion(m, u, &ftape);
        double l = 0.0;
        for (std::size_t j = 0; j < cp.range.size(); ++j) {
            const double d = cp.range[j] - g0[j];
            l += d * d;
        }
        Vec up_null(cp.null.size());
        for (std::size_t j = 0; j < cp.null.size(); ++j) {
            const double d = cp.null[j] - q0[j];
            l += d * d;
            up_null[j] = 2.0 * d / batch;
        }
        acc.loss.add(l);
        // the range term is y - g(0) up to rounding: constant in r, skipped
        Vec du = completion_backward(m, ftape, zero_range, up_null, &acc.grads);
        pinv_backward(m, ptape, du, &acc.grads);
    });
    // r-only contract: drop the forward-parameter components
    for (auto& bg : lv.grads.blocks) {
        std::fill(bg.du.data.begin(), bg.du.data.end(), 0.0);
        for (auto& w : bg.s.w)
            std::fill(w.data.begin(), w.data.end(), 0.0);
        for (auto& b : bg.s.b)
            std::fill(b.begin(), b.end(), 0.0);
        for (auto& w : bg.t.w)
            std::fill(w.data.begin(), w.data.end(), 0.0);
        for (auto& b : bg.t.b)
            std::fill(b.begin(), b.end(), 0.0);
    }
    return lv;
}

double mean_r_gap(const SpnnModel& m, const std::vector<Vec>& ys) {
    if (ys.empty())
        throw std::invalid_argument("mean_r_gap: empty batch");
    linalg::ExactSum total;
    std::vector<double> per(ys.size(), 0.0);
    parallel_for(ys.size(), [&](std::size_t i) {
        ModelPinvTape tape;
        pinv(m, ys[i], PinvMode::learned(), &tape);
        double acc = 0.0;
        std::size_t offset = 0;
        std::size_t blocks = 0;
        for (std::size_t si = m.stages.size(); si-- > 0;) {
            if (!tape.per_stage[si])
                continue;
            const auto& bt = *tape.per_stage[si];
            const std::size_t nd = bt.x1hat.size();
            double sq = 0.0;
            for (std::size_t j = 0; j < nd; ++j) {
                const double d = bt.x1hat[j] - m.natural_null()[offset + j];
                sq += d * d;
            }
            acc += std::sqrt(sq);
            offset += nd;
            ++blocks;
        }
        per[i] = acc / static_cast<double>(blocks);
    });
    for (double v : per)
        total.add(v);
    return total.value() / static_cast<double>(ys.size());
}

double attribute_accuracy(const SpnnModel& m, const data::Dataset& ds) {
    std::vector<double> hits(ds.n, 0.0);
    parallel_for(ds.n, [&](std::size_t i) {
        Vec y = model_forward(m, ds.sample(i));
        double h = 0.0;
        for (std::size_t k = 0; k < ds.n_attributes; ++k) {
            const bool pred = y[k] > 0.0;
            if (pred == (ds.label(i, k) != 0))
                h += 1.0;
        }
        hits[i] = h;
    });
    double total = 0.0;
    for (double h : hits)
        total += h;
    return total / static_cast<double>(ds.n * ds.n_attributes);
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i)
        idx[i] = i;
    for (std::size_t i = n; i-- > 1;)
        std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
    return idx;
}

}  // namespace

TrainResult train_phase1(SpnnModel& m, const data::Dataset& ds, const TrainConfig& cfg) {
    if (ds.n == 0)
        throw std::invalid_argument("train_phase1: empty dataset");
    TrainResult result;
    const std::size_t nf = m.forward_param_count();
    const std::size_t nr = m.r_param_count();
    nn::AdamConfig fwd_cfg{cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip};
    nn::AdamConfig r_cfg{cfg.lr_r, 0.9, 0.999, 1e-8, cfg.grad_clip};
    nn::Adam opt_fwd(nf, fwd_cfg);
    nn::Adam opt_r(nr, r_cfg);
    Rng rng(cfg.seed);
    std::size_t step = 0;

    Vec fwd_params(nf), r_params(nr);
    m.get_forward_params(fwd_params.data());
    m.get_r_params(r_params.data());
    Vec fwd_backup = fwd_params, r_backup = r_params;

    double prev_task = std::numeric_limits<double>::infinity();
    std::size_t flat_epochs = 0;

    for (std::size_t epoch = 0; epoch < cfg.phase1_epochs; ++epoch) {
        std::vector<std::size_t> order = shuffled_indices(ds.n, rng);
        double task_sum = 0.0, surj_sum = 0.0, stab_sum = 0.0;
        std::size_t batches = 0;
        try {
        for (std::size_t begin = 0; begin < ds.n; begin += cfg.batch_size) {
            const std::size_t end = std::min(ds.n, begin + cfg.batch_size);
            std::vector<Vec> xs, targets;
            for (std::size_t i = begin; i < end; ++i) {
                xs.push_back(ds.sample(order[i]));
                targets.push_back(ds.label_vec(order[i]));
            }
            std::vector<Vec> ys(xs.size());
            parallel_for(xs.size(), [&](std::size_t i) { ys[i] = model_forward(m, xs[i]); });

            LossValue task = loss_task(m, xs, targets, TaskKind::CrossEntropy);
            LossValue surj = loss_surjectivity(m, ys);
            LossValue stab = loss_stability(m, xs);
            task_sum += task.value;
            surj_sum += surj.value;
            stab_sum += stab.value;
            ++batches;

            Vec gf(nf, 0.0), gr(nr, 0.0), tmp_f(nf), tmp_r(nr);
            task.grads.flatten_forward(m, tmp_f.data());
            linalg::axpy(cfg.lambda_task, tmp_f, gf);
            surj.grads.flatten_forward(m, tmp_f.data());
            linalg::axpy(cfg.lambda_surj, tmp_f, gf);
            stab.grads.flatten_forward(m, tmp_f.data());
            linalg::axpy(cfg.lambda_stab, tmp_f, gf);
            surj.grads.flatten_r(tmp_r.data());
            linalg::axpy(cfg.lambda_surj, tmp_r, gr);
            stab.grads.flatten_r(tmp_r.data());
            linalg::axpy(cfg.lambda_stab, tmp_r, gr);

            ++step;
            const double warm = cfg.warmup_iters == 0
                                    ? 1.0
                                    : std::min(1.0, static_cast<double>(step) /
                                                        static_cast<double>(cfg.warmup_iters));
            opt_fwd.step(fwd_params, gf, warm);
            opt_r.step(r_params, gr, warm);
            m.set_forward_params(fwd_params.data());
            m.set_r_params(r_params.data());
        }
        } catch (const std::runtime_error& e) {
            // non-finite loss or gradient mid-epoch: roll back to the last
            // finite epoch boundary before reporting
            m.set_forward_params(fwd_backup.data());
            m.set_r_params(r_backup.data());
            fwd_params = fwd_backup;
            r_params = r_backup;
            throw std::runtime_error("train_phase1: diverged at epoch " +
                                     std::to_string(epoch) + " (" + e.what() +
                                     "); parameters restored to the last finite epoch");
        }

        EpochMetrics em;
        em.phase = 1;
        em.epoch = epoch;
        em.loss_task = task_sum / static_cast<double>(batches);
        em.loss_surj = surj_sum / static_cast<double>(batches);
        em.loss_stab = stab_sum / static_cast<double>(batches);
        em.loss_natural = 0.0;
        em.accuracy = attribute_accuracy(m, ds);
        if (!std::isfinite(em.loss_task) || !std::isfinite(em.loss_stab)) {
            m.set_forward_params(fwd_backup.data());
            m.set_r_params(r_backup.data());
            throw std::runtime_error("train_phase1: diverged at epoch " + std::to_string(epoch) +
                                     "; parameters restored to the last finite epoch");
        }
        fwd_backup = fwd_params;
        r_backup = r_params;
        result.metrics.push_back(em);

        if (std::abs(prev_task - em.loss_task) < cfg.plateau_tol) {
            if (++flat_epochs >= 3)
                break;
        } else {
            flat_epochs = 0;
        }
        prev_task = em.loss_task;
    }
    return result;
}

TrainResult train_phase2(SpnnModel& m, const std::vector<Vec>& xs, const TrainConfig& cfg) {
    if (xs.empty())
        throw std::invalid_argument("train_phase2: empty sample set");
    const std::uint64_t frozen = m.forward_checksum();
    TrainResult result;
    const std::size_t nr = m.r_param_count();
    nn::AdamConfig r_cfg{cfg.lr_r, 0.9, 0.999, 1e-8, cfg.grad_clip};
    nn::Adam opt_r(nr, r_cfg);
    Rng rng(cfg.seed + 1);
    std::size_t step = 0;

    // forward is frozen: the measurement batch is fixed up front
    std::vector<Vec> ys(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { ys[i] = model_forward(m, xs[i]); });

    Vec r_params(nr);
    m.get_r_params(r_params.data());

    for (std::size_t epoch = 0; epoch < cfg.phase2_epochs; ++epoch) {
        std::vector<std::size_t> order = shuffled_indices(xs.size(), rng);
        double nat_sum = 0.0, surj_sum = 0.0, stab_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < xs.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(xs.size(), begin + cfg.batch_size);
            std::vector<Vec> xb, yb;
            for (std::size_t i = begin; i < end; ++i) {
                xb.push_back(xs[order[i]]);
                yb.push_back(ys[order[i]]);
            }
            Vec gr(nr, 0.0), tmp_r(nr);
            double nat_v = 0.0, surj_v = 0.0, stab_v = 0.0;
            if (cfg.lambda_natural > 0.0) {
                LossValue nat = loss_natural(m, yb);
                nat_v = nat.value;
                nat.grads.flatten_r(tmp_r.data());
                linalg::axpy(cfg.lambda_natural, tmp_r, gr);
            }
            if (cfg.lambda_r_surj > 0.0) {
                LossValue surj = loss_surjectivity(m, yb);
                surj_v = surj.value;
                surj.grads.flatten_r(tmp_r.data());
                linalg::axpy(cfg.lambda_r_surj, tmp_r, gr);
            }
            if (cfg.lambda_r_stab > 0.0) {
                LossValue stab = loss_stability(m, xb);
                stab_v = stab.value;
                stab.grads.flatten_r(tmp_r.data());
                linalg::axpy(cfg.lambda_r_stab, tmp_r, gr);
            }
            nat_sum += nat_v;
            surj_sum += surj_v;
            stab_sum += stab_v;
            ++batches;

            ++step;
            const double warm = cfg.warmup_iters == 0
                                    ? 1.0
                                    : std::min(1.0, static_cast<double>(step) /
                                                        static_cast<double>(cfg.warmup_iters));
            opt_r.step(r_params, gr, warm);
            m.set_r_params(r_params.data());
        }
        EpochMetrics em;
        em.phase = 2;
        em.epoch = epoch;
        em.loss_natural = nat_sum / static_cast<double>(batches);
        em.loss_surj = surj_sum / static_cast<double>(batches);
        em.loss_stab = stab_sum / static_cast<double>(batches);
        result.metrics.push_back(em);
    }

    if (m.forward_checksum() != frozen)
        throw std::runtime_error("train_phase2: frozen forward parameters were mutated");
    return result;
}

}  // namespace spnn::train
