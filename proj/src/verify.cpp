#include "spnn/verify.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "spnn/parallel.hpp"

namespace spnn::verify {

using linalg::Vec;

bool Report::pass() const {
    for (const auto& c : checks)
        if (!c.pass)
            return false;
    return true;
}

void Report::add(std::string name, double value, double threshold, bool greater_is_pass) {
    CheckLine c;
    c.name = std::move(name);
    c.value = value;
    c.threshold = threshold;
    c.greater_is_pass = greater_is_pass;
    c.pass = greater_is_pass ? value >= threshold : value <= threshold;
    checks.push_back(std::move(c));
}

void Report::write_jsonl(std::ostream& os) const {
    for (const auto& c : checks) {
        os << "{\"suite\":\"" << suite << "\",\"check\":\"" << c.name << "\",\"value\":"
           << c.value << ",\"threshold\":" << c.threshold << ",\"cmp\":\""
           << (c.greater_is_pass ? ">=" : "<=") << "\",\"pass\":"
           << (c.pass ? "true" : "false") << "}\n";
    }
}

namespace {

// learned-r inverse chain with the affine division dropped: a deliberately
// broken right inverse the suites must catch
Vec corrupted_pinv(const SpnnModel& m, const Vec& y) {
    Vec cur = y;
    for (std::size_t si = m.stages.size(); si-- > 0;) {
        const auto& st = m.stages[si];
        if (const auto* r = std::get_if<Reshape>(&st)) {
            cur = linalg::pixel_shuffle(cur, r->c, r->h, r->w, r->factor);
            continue;
        }
        const auto& b = std::get<SurjectiveBlock>(st);
        Vec x1 = nn::mlp_forward(b.r_net, cur);
        Vec t_val = nn::mlp_forward(b.t_net, x1);
        Vec xt(b.in_dim);
        for (std::size_t i = 0; i < b.out_dim; ++i)
            xt[i] = cur[i] - t_val[i];  // missing / s
        for (std::size_t i = 0; i < b.null_dim(); ++i)
            xt[b.out_dim + i] = x1[i];
        cur = linalg::matvec_t(b.u, xt);
    }
    return cur;
}

double max_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v)
        m = std::max(m, x);
    return m;
}

}  // namespace

Report run_penrose_suite(const SpnnModel& m, std::size_t n_samples, double tol, Fault fault,
                         std::uint64_t seed) {
    Report report;
    report.suite = "penrose";

    Rng seeder(seed);
    Vec zc(m.null_dim());
    seeder.fill_normal(zc);
    const PinvMode modes[] = {PinvMode::learned(), PinvMode::natural(), PinvMode::constant(zc),
                              PinvMode::random_r()};

    auto apply_pinv = [&](const PinvMode& mode, const Vec& y) {
        if (fault == Fault::SkipScaleDivision)
            return corrupted_pinv(m, y);
        return pinv(m, y, mode);
    };

    for (const auto& mode : modes) {
        std::vector<double> right(n_samples, 0.0), id1(n_samples, 0.0), id2(n_samples, 0.0);
        parallel_for(n_samples, [&](std::size_t i) {
            Rng rng(seed ^ (0x9e37 * (i + 1)));
            Vec x(m.input_dim), y(m.output_dim);
            rng.fill_normal(x);
            rng.fill_normal(y);
            // right inverse on arbitrary targets
            right[i] = linalg::norm_inf(
                linalg::sub(model_forward(m, apply_pinv(mode, y)), y));
            // identity 1: g g+ g = g
            Vec gx = model_forward(m, x);
            id1[i] = linalg::norm_inf(
                linalg::sub(model_forward(m, apply_pinv(mode, gx)), gx));
            // identity 2: g+ g g+ = g+
            Vec gy = apply_pinv(mode, y);
            id2[i] = linalg::norm_inf(
                linalg::sub(apply_pinv(mode, model_forward(m, gy)), gy));
        });
        const std::string tag = pinv_mode_name(mode.kind);
        report.add("right_inverse/" + tag, max_of(right), 1e-8);
        report.add("penrose_1/" + tag, max_of(id1), tol);
        report.add("penrose_2/" + tag, max_of(id2), tol);
    }
    return report;
}

Report run_projection_suite(const SpnnModel& m, std::size_t n_samples, std::uint64_t seed) {
    Report report;
    report.suite = "projection";

    // natural mode: exact consistency and frozen null coordinates
    std::vector<double> consist(n_samples, 0.0), drift(n_samples, 0.0);
    std::vector<double> rr_consist(n_samples, 0.0), rr_drift(n_samples, 0.0);
    parallel_for(n_samples, [&](std::size_t i) {
        Rng rng(seed ^ (0x51ed * (i + 1)));
        Vec x(m.input_dim), y(m.output_dim);
        rng.fill_normal(x);
        rng.fill_normal(y);
        CompletionPoint before = completion(m, x);

        Vec xn = nlbp::nlbp_exact(m, x, y, PinvMode::natural());
        consist[i] = linalg::norm_inf(linalg::sub(model_forward(m, xn), y));
        drift[i] = linalg::norm_inf(linalg::sub(completion(m, xn).null, before.null));

        Vec xr = nlbp::nlbp_exact(m, x, y, PinvMode::random_r());
        rr_consist[i] = linalg::norm_inf(linalg::sub(model_forward(m, xr), y));
        rr_drift[i] = linalg::norm_inf(linalg::sub(completion(m, xr).null, before.null));
    });
    report.add("consistency/natural", max_of(consist), 1e-7);
    report.add("null_drift/natural", max_of(drift), 1e-8);
    report.add("consistency/random_r", max_of(rr_consist), 1e-7);
    // null invariance belongs to the natural mode alone: random r must drift
    report.add("null_drift/random_r", max_of(rr_drift), 1e-5, /*greater_is_pass=*/true);

    // linear reduction: zero out s,t (keeping the mixers) and compare the
    // exact back-projection against the closed form
    SpnnModel lin = m;
    for (auto& st : lin.stages)
        if (auto* b = std::get_if<SurjectiveBlock>(&st)) {
            b->s_net = nn::Mlp::zeros(b->s_net.dims, b->s_net.hidden, nn::Head::Scale);
            b->t_net = nn::Mlp::zeros(b->t_net.dims, b->t_net.hidden, nn::Head::Linear);
        }
    lin.refresh();
    linalg::Mat a = induced_linear_matrix(lin);
    std::vector<double> lin_gap(n_samples, 0.0);
    parallel_for(n_samples, [&](std::size_t i) {
        Rng rng(seed ^ (0x77f1 * (i + 1)));
        Vec x(lin.input_dim), y(lin.output_dim);
        rng.fill_normal(x);
        rng.fill_normal(y);
        Vec xn = nlbp::nlbp_exact(lin, x, y, PinvMode::natural());
        Vec xl = linalg::linear_back_project(x, y, a);
        lin_gap[i] = linalg::norm_inf(linalg::sub(xn, xl));
    });
    report.add("linear_reduction", max_of(lin_gap), 1e-8);
    return report;
}

SpnnModel make_min_norm_model(const SpnnModel& m, const std::vector<Vec>& ys,
                              std::size_t epochs, double lr, std::uint64_t seed) {
    SpnnModel mn = m;
    const std::size_t nr = mn.r_param_count();
    nn::AdamConfig acfg{lr, 0.9, 0.999, 1e-8, 1.0};
    nn::Adam opt(nr, acfg);
    Vec params(nr);
    mn.get_r_params(params.data());
    Rng rng(seed);
    const std::size_t batch_size = 32;
    struct Accum {
        linalg::ExactSum loss;
        ModelGrads grads;
    };
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t begin = 0; begin < ys.size(); begin += batch_size) {
            const std::size_t end = std::min(ys.size(), begin + batch_size);
            const double bsz = static_cast<double>(end - begin);
            ModelGrads grads = ModelGrads::zeros_like(mn);
            chunked_reduce(
                end - begin, kReduceChunks,
                [&] { return Accum{linalg::ExactSum{}, ModelGrads::zeros_like(mn)}; },
                [&](Accum& acc, std::size_t k) {
                    ModelPinvTape tape;
                    Vec x = pinv(mn, ys[begin + k], PinvMode::learned(), &tape);
                    Vec up(x.size());
                    double l = 0.0;
                    for (std::size_t j = 0; j < x.size(); ++j) {
                        l += x[j] * x[j];
                        up[j] = 2.0 * x[j] / bsz;
                    }
                    acc.loss.add(l);
                    pinv_backward(mn, tape, up, &acc.grads);
                },
                [&](Accum& acc) { grads.add(acc.grads); });
            Vec flat(nr);
            grads.flatten_r(flat.data());
            opt.step(params, flat);
            mn.set_r_params(params.data());
        }
        (void)rng;
    }
    return mn;
}

namespace {

struct CellOutcome {
    double agreement = 0.0;
    double residual = 0.0;
};

CellOutcome run_cell(const SpnnModel& m, const diffusion::Denoiser& den,
                     const data::SyntheticSpec& spec, const data::Dataset& test,
                     const std::vector<Vec>& targets, const diffusion::SamplerConfig& cfg,
                     std::uint64_t seed) {
    constexpr double kDivergedResidual = 1e6;
    std::vector<double> agree(targets.size(), 0.0), resid(targets.size(), 0.0);
    parallel_for(targets.size(), [&](std::size_t i) {
        diffusion::GuidanceRule rule = diffusion::GuidanceRule::fixed(targets[i]);
        try {
            diffusion::SampleResult sr =
                diffusion::sample_guided(den, m, rule, cfg, seed + 31 * i);
            // content check: what does the generated sample actually hold?
            std::vector<std::uint8_t> decoded = data::decode_labels(spec, sr.x0);
            double hits = 0.0;
            for (std::size_t k = 0; k < decoded.size(); ++k)
                if (decoded[k] == test.label(i, k))
                    hits += 1.0;
            agree[i] = hits / static_cast<double>(decoded.size());
            Vec logits = model_forward(m, sr.x0);
            resid[i] = std::min(kDivergedResidual,
                                linalg::norm2(linalg::sub(logits, targets[i])));
        } catch (const std::runtime_error&) {
            // a chain that blew up scores zero agreement; that failure mode
            // is exactly what the ablation measures
            agree[i] = 0.0;
            resid[i] = kDivergedResidual;
        }
    });
    CellOutcome out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        out.agreement += agree[i];
        out.residual += resid[i];
    }
    out.agreement /= static_cast<double>(targets.size());
    out.residual /= static_cast<double>(targets.size());
    return out;
}

}  // namespace

AblationReport run_ablation_grid(const SpnnModel& m, const diffusion::Denoiser& den,
                                 const data::SyntheticSpec& spec, const data::Dataset& test,
                                 std::size_t n_targets,
                                 const diffusion::SamplerConfig& base_cfg,
                                 std::uint64_t seed) {
    AblationReport report;
    report.summary.suite = "ablation";
    n_targets = std::min<std::size_t>(n_targets, test.n);

    std::vector<Vec> targets;
    for (std::size_t i = 0; i < n_targets; ++i)
        targets.push_back(model_forward(m, test.sample(i)));

    std::vector<Vec> train_ys;
    for (std::size_t i = 0; i < test.n; ++i)
        train_ys.push_back(model_forward(m, test.sample(i)));
    // trained to convergence: the selector must actually reach the
    // minimal-norm section, not linger at its harmless random init
    SpnnModel min_norm = make_min_norm_model(m, train_ys, 200, 2e-3, seed + 9);

    auto cfg_with = [&](nlbp::BpKind kind, PinvMode mode) {
        diffusion::SamplerConfig cfg = base_cfg;
        cfg.nlbp.kind = kind;
        cfg.nlbp.pinv_mode = std::move(mode);
        return cfg;
    };

    // reference first
    {
        CellOutcome ref = run_cell(m, den, spec, test, targets,
                                   cfg_with(nlbp::BpKind::Gentle, PinvMode::natural()), seed);
        report.cells.push_back({"natural", "gentle", ref.agreement, ref.residual});
    }
    const struct {
        const char* r_kind;
        bool min_norm_model;
        PinvMode mode;
    } r_variants[] = {
        {"random", false, PinvMode::random_r()},
        {"min_norm", true, PinvMode::learned()},
    };
    for (const auto& rv : r_variants) {
        for (nlbp::BpKind kind : {nlbp::BpKind::Naive, nlbp::BpKind::Gentle}) {
            const SpnnModel& model = rv.min_norm_model ? min_norm : m;
            CellOutcome out =
                run_cell(model, den, spec, test, targets, cfg_with(kind, rv.mode), seed);
            report.cells.push_back({rv.r_kind,
                                    kind == nlbp::BpKind::Naive ? "naive" : "gentle",
                                    out.agreement, out.residual});
        }
    }

    const AblationCell& ref = report.cells.front();
    for (std::size_t i = 1; i < report.cells.size(); ++i) {
        const auto& cell = report.cells[i];
        report.summary.add("margin/" + cell.r_kind + "+" + cell.bp_kind,
                           ref.agreement - cell.agreement, 0.20, /*greater_is_pass=*/true);
    }
    return report;
}

}  // namespace spnn::verify
