#include "spnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "spnn/parallel.hpp"

namespace spnn {

using linalg::matvec;
using linalg::matvec_t;

const char* pinv_mode_name(PinvMode::Kind k) {
    switch (k) {
        case PinvMode::Kind::LearnedR: return "learned_r";
        case PinvMode::Kind::Natural: return "natural";
        case PinvMode::Kind::Constant: return "constant";
        case PinvMode::Kind::RandomR: return "random_r";
    }
    return "?";
}

namespace {

std::vector<std::size_t> mlp_dims(std::size_t in, std::size_t out, const SpnnInit& init) {
    std::vector<std::size_t> dims;
    dims.push_back(in);
    for (std::size_t i = 0; i < init.hidden_depth; ++i)
        dims.push_back(init.hidden_width);
    dims.push_back(out);
    return dims;
}

SurjectiveBlock make_block(std::size_t in_dim, std::size_t out_dim, const SpnnInit& init,
                           Rng& rng) {
    if (out_dim == 0 || out_dim >= in_dim)
        throw std::invalid_argument("SurjectiveBlock: need 1 <= d < D");
    SurjectiveBlock b;
    b.in_dim = in_dim;
    b.out_dim = out_dim;
    b.mixer = linalg::SkewGenerator(in_dim);
    rng.fill_uniform(b.mixer.params, -0.3, 0.3);
    const std::size_t nd = in_dim - out_dim;
    if (init.zero_st) {
        b.s_net = nn::Mlp::zeros(mlp_dims(nd, out_dim, init), init.act, nn::Head::Scale);
        b.t_net = nn::Mlp::zeros(mlp_dims(nd, out_dim, init), init.act, nn::Head::Linear);
    } else {
        b.s_net = nn::Mlp::make(mlp_dims(nd, out_dim, init), init.act, nn::Head::Scale, rng);
        b.t_net = nn::Mlp::make(mlp_dims(nd, out_dim, init), init.act, nn::Head::Linear, rng);
    }
    b.r_net = nn::Mlp::make(mlp_dims(out_dim, nd, init), init.act, nn::Head::Linear, rng);
    b.r_rand = nn::Mlp::make(mlp_dims(out_dim, nd, init), init.act, nn::Head::Linear, rng);
    // r_rand plays the arbitrary-selector role: an untrained net whose
    // selections span the data's coordinate range instead of hugging zero
    for (auto& w : b.r_rand.w.back().data)
        w *= 8.0;
    b.refresh_u();
    return b;
}

struct SplitView {
    Vec head, tail;
};

SplitView split_at(const Vec& v, std::size_t d) {
    SplitView s;
    s.head.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(d));
    s.tail.assign(v.begin() + static_cast<std::ptrdiff_t>(d), v.end());
    return s;
}

Vec concat(const Vec& a, const Vec& b) {
    Vec r;
    r.reserve(a.size() + b.size());
    r.insert(r.end(), a.begin(), a.end());
    r.insert(r.end(), b.begin(), b.end());
    return r;
}

}  // namespace

std::size_t SpnnModel::block_count() const {
    std::size_t n = 0;
    for (const auto& st : stages)
        if (std::holds_alternative<SurjectiveBlock>(st))
            ++n;
    return n;
}

SpnnModel SpnnModel::make_flat(std::size_t input_dim, const std::vector<std::size_t>& out_dims,
                               const SpnnInit& init, Rng& rng) {
    if (out_dims.empty())
        throw std::invalid_argument("SpnnModel: need at least one block");
    SpnnModel m;
    m.input_dim = input_dim;
    std::size_t cur = input_dim;
    for (std::size_t d : out_dims) {
        m.stages.emplace_back(make_block(cur, d, init, rng));
        cur = d;
    }
    m.output_dim = cur;
    m.refresh();
    return m;
}

SpnnModel SpnnModel::make_image(std::size_t c, std::size_t h, std::size_t w, std::size_t factor,
                                const std::vector<std::size_t>& out_dims, const SpnnInit& init,
                                Rng& rng) {
    if (factor == 0 || h % factor != 0 || w % factor != 0)
        throw std::invalid_argument("SpnnModel: image dims not divisible by factor");
    SpnnModel m;
    m.input_dim = c * h * w;
    m.stages.emplace_back(Reshape{c, h, w, factor});
    std::size_t cur = m.input_dim;
    for (std::size_t d : out_dims) {
        m.stages.emplace_back(make_block(cur, d, init, rng));
        cur = d;
    }
    m.output_dim = cur;
    m.refresh();
    return m;
}

void SpnnModel::refresh() {
    for (auto& st : stages)
        if (auto* b = std::get_if<SurjectiveBlock>(&st))
            b->refresh_u();
    CompletionPoint origin = completion(*this, Vec(input_dim, 0.0));
    g0_ = std::move(origin.range);
    q0_ = std::move(origin.null);
}

std::size_t SpnnModel::forward_param_count() const {
    std::size_t n = 0;
    for (const auto& st : stages)
        if (const auto* b = std::get_if<SurjectiveBlock>(&st))
            n += b->mixer.param_count() + b->s_net.param_count() + b->t_net.param_count();
    return n;
}

std::size_t SpnnModel::r_param_count() const {
    std::size_t n = 0;
    for (const auto& st : stages)
        if (const auto* b = std::get_if<SurjectiveBlock>(&st))
            n += b->r_net.param_count();
    return n;
}

void SpnnModel::get_forward_params(double* out) const {
    for (const auto& st : stages)
        if (const auto* b = std::get_if<SurjectiveBlock>(&st)) {
            out = std::copy(b->mixer.params.begin(), b->mixer.params.end(), out);
            b->s_net.get_params(out);
            out += b->s_net.param_count();
            b->t_net.get_params(out);
            out += b->t_net.param_count();
        }
}

void SpnnModel::set_forward_params(const double* in) {
    for (auto& st : stages)
        if (auto* b = std::get_if<SurjectiveBlock>(&st)) {
            std::copy(in, in + b->mixer.param_count(), b->mixer.params.begin());
            in += b->mixer.param_count();
            b->s_net.set_params(in);
            in += b->s_net.param_count();
            b->t_net.set_params(in);
            in += b->t_net.param_count();
        }
    refresh();
}

void SpnnModel::get_r_params(double* out) const {
    for (const auto& st : stages)
        if (const auto* b = std::get_if<SurjectiveBlock>(&st)) {
            b->r_net.get_params(out);
            out += b->r_net.param_count();
        }
}

void SpnnModel::set_r_params(const double* in) {
    for (auto& st : stages)
        if (auto* b = std::get_if<SurjectiveBlock>(&st)) {
            b->r_net.set_params(in);
            in += b->r_net.param_count();
        }
}

std::uint64_t SpnnModel::forward_checksum() const {
    Vec buf(forward_param_count());
    get_forward_params(buf.data());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(buf.data());
    for (std::size_t i = 0; i < buf.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

ModelGrads ModelGrads::zeros_like(const SpnnModel& m) {
    ModelGrads g;
    for (const auto& st : m.stages)
        if (const auto* b = std::get_if<SurjectiveBlock>(&st)) {
            BlockGrads bg;
            bg.du = Mat(b->in_dim, b->in_dim);
            bg.s = nn::MlpGrads::zeros_like(b->s_net);
            bg.t = nn::MlpGrads::zeros_like(b->t_net);
            bg.r = nn::MlpGrads::zeros_like(b->r_net);
            g.blocks.push_back(std::move(bg));
        }
    return g;
}

void ModelGrads::add(const ModelGrads& other) {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        for (std::size_t i = 0; i < blocks[k].du.data.size(); ++i)
            blocks[k].du.data[i] += other.blocks[k].du.data[i];
        blocks[k].s.add(other.blocks[k].s);
        blocks[k].t.add(other.blocks[k].t);
        blocks[k].r.add(other.blocks[k].r);
    }
}

void ModelGrads::flatten_forward(const SpnnModel& m, double* out) const {
    std::size_t k = 0;
    for (const auto& st : m.stages)
        if (const auto* b = std::get_if<SurjectiveBlock>(&st)) {
            Vec mg = linalg::cayley_grad(b->mixer, blocks[k].du);
            out = std::copy(mg.begin(), mg.end(), out);
            out += blocks[k].s.flatten(out);
            out += blocks[k].t.flatten(out);
            ++k;
        }
}

void ModelGrads::flatten_r(double* out) const {
    for (const auto& bg : blocks)
        out += bg.r.flatten(out);
}

Vec block_forward(const SurjectiveBlock& b, const Vec& x, Vec* null_out,
                  BlockForwardTape* tape) {
    if (x.size() != b.in_dim)
        throw std::invalid_argument("block_forward: input dim mismatch");
    Vec xt = matvec(b.u, x);
    SplitView sp = split_at(xt, b.out_dim);
    nn::MlpTape s_tape, t_tape;
    Vec s_val = nn::mlp_forward(b.s_net, sp.tail, tape ? &s_tape : nullptr);
    Vec t_val = nn::mlp_forward(b.t_net, sp.tail, tape ? &t_tape : nullptr);
    Vec y(b.out_dim);
    for (std::size_t i = 0; i < b.out_dim; ++i)
        y[i] = sp.head[i] * s_val[i] + t_val[i];
    if (null_out)
        *null_out = sp.tail;
    if (tape) {
        tape->x = x;
        tape->xt = std::move(xt);
        tape->s_tape = std::move(s_tape);
        tape->t_tape = std::move(t_tape);
        tape->y = y;
    }
    return y;
}

namespace {

// Shared inverse step: given the block-output-side vector y and a chosen
// null x1hat, undo the affine coupling and the rotation.
Vec block_invert_with_null(const SurjectiveBlock& b, const Vec& y, const Vec& x1hat,
                           BlockPinvTape* tape) {
    nn::MlpTape s_tape, t_tape;
    Vec s_val = nn::mlp_forward(b.s_net, x1hat, tape ? &s_tape : nullptr);
    Vec t_val = nn::mlp_forward(b.t_net, x1hat, tape ? &t_tape : nullptr);
    Vec x0hat(b.out_dim);
    for (std::size_t i = 0; i < b.out_dim; ++i)
        x0hat[i] = (y[i] - t_val[i]) / s_val[i];
    Vec xt = concat(x0hat, x1hat);
    Vec x = matvec_t(b.u, xt);
    if (tape) {
        tape->y = y;
        tape->x1hat = x1hat;
        tape->s_tape = std::move(s_tape);
        tape->t_tape = std::move(t_tape);
        tape->x0hat = std::move(x0hat);
        tape->xt = std::move(xt);
        tape->x = x;
    }
    return x;
}

}  // namespace

Vec block_pinv(const SurjectiveBlock& b, const Vec& y) {
    if (y.size() != b.out_dim)
        throw std::invalid_argument("block_pinv: input dim mismatch");
    Vec x1hat = nn::mlp_forward(b.r_net, y);
    return block_invert_with_null(b, y, x1hat, nullptr);
}

CompletionPoint completion(const SpnnModel& m, const Vec& x, ModelForwardTape* tape) {
    if (x.size() != m.input_dim)
        throw std::invalid_argument("completion: input dim mismatch");
    if (tape) {
        *tape = ModelForwardTape{};
        tape->input = x;
        tape->per_stage.resize(m.stages.size());
    }
    Vec cur = x;
    std::vector<Vec> nulls;  // forward block order
    std::size_t si = 0;
    for (const auto& st : m.stages) {
        if (const auto* r = std::get_if<Reshape>(&st)) {
            cur = linalg::pixel_unshuffle(cur, r->c, r->h, r->w, r->factor);
        } else {
            const auto& b = std::get<SurjectiveBlock>(st);
            Vec null_part;
            BlockForwardTape bt;
            cur = block_forward(b, cur, &null_part, tape ? &bt : nullptr);
            if (tape)
                tape->per_stage[si] = std::move(bt);
            nulls.push_back(std::move(null_part));
        }
        ++si;
    }
    CompletionPoint p;
    p.range = std::move(cur);
    for (std::size_t k = nulls.size(); k-- > 0;)
        p.null.insert(p.null.end(), nulls[k].begin(), nulls[k].end());
    return p;
}

Vec model_forward(const SpnnModel& m, const Vec& x) { return completion(m, x).range; }

namespace {

// The inverse walk shared by completion_inverse and every pinv mode: stages
// in reverse order; each block's null is supplied by `source`.
template <class NullSource>
Vec invert_chain(const SpnnModel& m, const Vec& y, NullSource&& source, ModelPinvTape* tape) {
    if (y.size() != m.output_dim)
        throw std::invalid_argument("pinv: target dim mismatch");
    if (tape) {
        *tape = ModelPinvTape{};
        tape->y = y;
        tape->per_stage.resize(m.stages.size());
    }
    Vec cur = y;
    std::size_t offset = 0;  // into the last-block-first null layout
    for (std::size_t si = m.stages.size(); si-- > 0;) {
        const auto& st = m.stages[si];
        if (const auto* r = std::get_if<Reshape>(&st)) {
            cur = linalg::pixel_shuffle(cur, r->c, r->h, r->w, r->factor);
        } else {
            const auto& b = std::get<SurjectiveBlock>(st);
            BlockPinvTape bt;
            Vec x1hat = source(b, cur, offset, tape ? &bt : nullptr);
            offset += b.null_dim();
            cur = block_invert_with_null(b, cur, x1hat, tape ? &bt : nullptr);
            if (tape)
                tape->per_stage[si] = std::move(bt);
        }
    }
    if (tape)
        tape->x = cur;
    return cur;
}

Vec slice(const Vec& v, std::size_t offset, std::size_t len, const char* what) {
    if (offset + len > v.size())
        throw std::invalid_argument(std::string(what) + ": null vector too short");
    return Vec(v.begin() + static_cast<std::ptrdiff_t>(offset),
               v.begin() + static_cast<std::ptrdiff_t>(offset + len));
}

}  // namespace

Vec completion_inverse(const SpnnModel& m, const CompletionPoint& p) {
    if (p.null.size() != m.null_dim())
        throw std::invalid_argument("completion_inverse: null dim mismatch");
    return invert_chain(
        m, p.range,
        [&](const SurjectiveBlock& b, const Vec&, std::size_t offset, BlockPinvTape*) {
            return slice(p.null, offset, b.null_dim(), "completion_inverse");
        },
        nullptr);
}

Vec pinv(const SpnnModel& m, const Vec& y, const PinvMode& mode, ModelPinvTape* tape) {
    switch (mode.kind) {
        case PinvMode::Kind::LearnedR:
            return invert_chain(
                m, y,
                [&](const SurjectiveBlock& b, const Vec& cur, std::size_t, BlockPinvTape* bt) {
                    nn::MlpTape rt;
                    Vec x1 = nn::mlp_forward(b.r_net, cur, bt ? &rt : nullptr);
                    if (bt) {
                        bt->through_r = true;
                        bt->r_learned = true;
                        bt->r_tape = std::move(rt);
                    }
                    return x1;
                },
                tape);
        case PinvMode::Kind::RandomR:
            return invert_chain(
                m, y,
                [&](const SurjectiveBlock& b, const Vec& cur, std::size_t, BlockPinvTape* bt) {
                    nn::MlpTape rt;
                    Vec x1 = nn::mlp_forward(b.r_rand, cur, bt ? &rt : nullptr);
                    if (bt) {
                        bt->through_r = true;
                        bt->r_learned = false;
                        bt->r_tape = std::move(rt);
                    }
                    return x1;
                },
                tape);
        case PinvMode::Kind::Natural:
            return invert_chain(
                m, y,
                [&](const SurjectiveBlock& b, const Vec&, std::size_t offset, BlockPinvTape*) {
                    return slice(m.natural_null(), offset, b.null_dim(), "pinv natural");
                },
                tape);
        case PinvMode::Kind::Constant:
            if (mode.z.size() != m.null_dim())
                throw std::invalid_argument("pinv constant: z dim mismatch");
            return invert_chain(
                m, y,
                [&](const SurjectiveBlock& b, const Vec&, std::size_t offset, BlockPinvTape*) {
                    return slice(mode.z, offset, b.null_dim(), "pinv constant");
                },
                tape);
    }
    throw std::logic_error("pinv: bad mode");
}

Vec completion_backward(const SpnnModel& m, const ModelForwardTape& tape, const Vec& up_range,
                        const Vec& up_null, ModelGrads* grads) {
    if (up_range.size() != m.output_dim || up_null.size() != m.null_dim())
        throw std::invalid_argument("completion_backward: upstream dim mismatch");
    std::vector<std::size_t> block_slot(m.stages.size(), 0);
    std::size_t nb = 0;
    for (std::size_t si = 0; si < m.stages.size(); ++si)
        if (std::holds_alternative<SurjectiveBlock>(m.stages[si]))
            block_slot[si] = nb++;

    Vec cur = up_range;
    std::size_t offset = 0;
    for (std::size_t si = m.stages.size(); si-- > 0;) {
        const auto& st = m.stages[si];
        if (const auto* r = std::get_if<Reshape>(&st)) {
            cur = linalg::pixel_shuffle(cur, r->c, r->h, r->w, r->factor);
            continue;
        }
        const auto& b = std::get<SurjectiveBlock>(st);
        const BlockForwardTape& bt = *tape.per_stage[si];
        const std::size_t d = b.out_dim, nd = b.null_dim();

        // y = x0 * s + t
        Vec ds(d), dt(d), dx0(d);
        for (std::size_t i = 0; i < d; ++i) {
            dx0[i] = cur[i] * bt.s_tape.output[i];
            ds[i] = cur[i] * bt.xt[i];  // xt[0:d] is x0
            dt[i] = cur[i];
        }
        Vec dx1 = slice(up_null, offset, nd, "completion_backward");
        offset += nd;
        Vec ds_in = nn::mlp_backward(b.s_net, bt.s_tape, ds, grads ? &grads->blocks[block_slot[si]].s : nullptr);
        Vec dt_in = nn::mlp_backward(b.t_net, bt.t_tape, dt, grads ? &grads->blocks[block_slot[si]].t : nullptr);
        for (std::size_t i = 0; i < nd; ++i)
            dx1[i] += ds_in[i] + dt_in[i];

        Vec dxt = concat(dx0, dx1);
        if (grads) {
            Mat& du = grads->blocks[block_slot[si]].du;
            for (std::size_t i = 0; i < b.in_dim; ++i)
                for (std::size_t j = 0; j < b.in_dim; ++j)
                    du.at(i, j) += dxt[i] * bt.x[j];
        }
        cur = matvec_t(b.u, dxt);
    }
    return cur;
}

Vec pinv_backward(const SpnnModel& m, const ModelPinvTape& tape, const Vec& up_x,
                  ModelGrads* grads) {
    if (up_x.size() != m.input_dim)
        throw std::invalid_argument("pinv_backward: upstream dim mismatch");
    std::vector<std::size_t> block_slot(m.stages.size(), 0);
    std::size_t nb = 0;
    for (std::size_t si = 0; si < m.stages.size(); ++si)
        if (std::holds_alternative<SurjectiveBlock>(m.stages[si]))
            block_slot[si] = nb++;

    // the chain executed stages in reverse, so backprop walks them forward
    Vec cur = up_x;
    for (std::size_t si = 0; si < m.stages.size(); ++si) {
        const auto& st = m.stages[si];
        if (const auto* r = std::get_if<Reshape>(&st)) {
            cur = linalg::pixel_unshuffle(cur, r->c, r->h, r->w, r->factor);
            continue;
        }
        const auto& b = std::get<SurjectiveBlock>(st);
        const BlockPinvTape& bt = *tape.per_stage[si];
        const std::size_t d = b.out_dim, nd = b.null_dim();

        // x = U^T xt
        if (grads) {
            Mat& du = grads->blocks[block_slot[si]].du;
            for (std::size_t i = 0; i < b.in_dim; ++i)
                for (std::size_t j = 0; j < b.in_dim; ++j)
                    du.at(i, j) += bt.xt[i] * cur[j];
        }
        Vec dxt = matvec(b.u, cur);
        Vec dx0(dxt.begin(), dxt.begin() + static_cast<std::ptrdiff_t>(d));
        Vec dx1(dxt.begin() + static_cast<std::ptrdiff_t>(d), dxt.end());

        // x0 = (y - t) / s
        Vec dy(d), dt(d), ds(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double s_i = bt.s_tape.output[i];
            dy[i] = dx0[i] / s_i;
            dt[i] = -dx0[i] / s_i;
            ds[i] = -dx0[i] * bt.x0hat[i] / s_i;
        }
        Vec ds_in = nn::mlp_backward(b.s_net, bt.s_tape, ds, grads ? &grads->blocks[block_slot[si]].s : nullptr);
        Vec dt_in = nn::mlp_backward(b.t_net, bt.t_tape, dt, grads ? &grads->blocks[block_slot[si]].t : nullptr);
        for (std::size_t i = 0; i < nd; ++i)
            dx1[i] += ds_in[i] + dt_in[i];

        if (bt.through_r) {
            const nn::Mlp& rnet = bt.r_learned ? b.r_net : b.r_rand;
            nn::MlpGrads* rg = (bt.r_learned && grads) ? &grads->blocks[block_slot[si]].r : nullptr;
            Vec dr_in = nn::mlp_backward(rnet, bt.r_tape, dx1, rg);
            for (std::size_t i = 0; i < d; ++i)
                dy[i] += dr_in[i];
        }
        cur = std::move(dy);
    }
    return cur;
}

namespace {

struct OracleResult {
    Vec x;
    double f = 0.0;
};

}  // namespace

Vec preimage_oracle(const SpnnModel& m, const Vec& y, std::size_t restarts, std::uint64_t seed) {
    if (m.null_dim() > 8)
        throw std::invalid_argument("preimage_oracle: null_dim > 8 (desk-scale only)");
    if (y.size() != m.output_dim)
        throw std::invalid_argument("preimage_oracle: target dim mismatch");
    const std::size_t zd = m.null_dim();
    const CompletionPoint origin = completion(m, Vec(m.input_dim, 0.0));

    auto fval = [&](const Vec& z) {
        CompletionPoint p{y, z};
        Vec x = completion_inverse(m, p);
        CompletionPoint gx = completion(m, x);
        double acc = 0.0;
        for (std::size_t i = 0; i < gx.range.size(); ++i) {
            const double dr = gx.range[i] - origin.range[i];
            acc += dr * dr;
        }
        for (std::size_t i = 0; i < gx.null.size(); ++i) {
            const double dn = gx.null[i] - origin.null[i];
            acc += dn * dn;
        }
        return acc;
    };

    const double start_scale = 2.0 + 2.0 * linalg::norm_inf(y);
    std::vector<OracleResult> results(restarts);
    parallel_for(restarts, [&](std::size_t k) {
        Rng rng(seed * 1000003ULL + k);
        Vec z(zd);
        rng.fill_uniform(z, -start_scale, start_scale);
        double f = fval(z);
        for (int iter = 0; iter < 300; ++iter) {
            Vec g(zd);
            double gmax = 0.0;
            for (std::size_t i = 0; i < zd; ++i) {
                const double hstep = 1e-6 * std::max(1.0, std::abs(z[i]));
                const double saved = z[i];
                z[i] = saved + hstep;
                const double fp = fval(z);
                z[i] = saved - hstep;
                const double fm = fval(z);
                z[i] = saved;
                g[i] = (fp - fm) / (2.0 * hstep);
                gmax = std::max(gmax, std::abs(g[i]));
            }
            if (gmax <= 1e-9 * (1.0 + std::abs(f)))
                break;
            const double g2 = linalg::dot(g, g);
            double alpha = 1.0;
            bool moved = false;
            while (alpha > 1e-12) {
                Vec zt = z;
                linalg::axpy(-alpha, g, zt);
                const double ft = fval(zt);
                if (ft <= f - 1e-4 * alpha * g2) {
                    z = std::move(zt);
                    f = ft;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!moved)
                break;  // at the numerical floor
        }
        results[k].x = completion_inverse(m, CompletionPoint{y, z});
        results[k].f = f;
    });

    std::size_t best = 0;
    for (std::size_t k = 1; k < restarts; ++k)
        if (results[k].f < results[best].f)
            best = k;
    double worst_gap = 0.0;
    for (std::size_t k = 0; k < restarts; ++k)
        worst_gap = std::max(worst_gap,
                             linalg::norm_inf(linalg::sub(results[k].x, results[best].x)));
    if (worst_gap > 1e-4)
        throw std::runtime_error("preimage_oracle: restarts disagree by " +
                                 std::to_string(worst_gap) +
                                 " (completion is not behaving like a bijection)");
    return results[best].x;
}

Mat induced_linear_matrix(const SpnnModel& m) {
    Mat a(m.output_dim, m.input_dim);
    for (std::size_t j = 0; j < m.input_dim; ++j) {
        Vec e(m.input_dim, 0.0);
        e[j] = 1.0;
        Vec col = model_forward(m, e);
        for (std::size_t i = 0; i < m.output_dim; ++i)
            a.at(i, j) = col[i];
    }
    return a;
}

CoordinateTestCase CoordinateTestCase::make(std::size_t n, std::size_t m, std::size_t width,
                                            Rng& rng) {
    if (n < 2 || m == 0 || m >= n)
        throw std::invalid_argument("CoordinateTestCase: need 1 <= m < n, n >= 2");
    CoordinateTestCase tc;
    tc.dim = n;
    tc.split = n / 2;
    const std::size_t a_dim = tc.split, b_dim = n - tc.split;
    tc.s1 = nn::Mlp::make({b_dim, width, a_dim}, nn::Act::Tanh, nn::Head::Scale, rng);
    tc.t1 = nn::Mlp::make({b_dim, width, a_dim}, nn::Act::Tanh, nn::Head::Linear, rng);
    tc.s2 = nn::Mlp::make({a_dim, width, b_dim}, nn::Act::Tanh, nn::Head::Scale, rng);
    tc.t2 = nn::Mlp::make({a_dim, width, b_dim}, nn::Act::Tanh, nn::Head::Linear, rng);
    tc.t1_at_zero = nn::mlp_forward(tc.t1, Vec(b_dim, 0.0));
    tc.t2_at_zero = nn::mlp_forward(tc.t2, Vec(a_dim, 0.0));

    // full row rank with a healthy condition number
    for (int attempt = 0; attempt < 64; ++attempt) {
        Mat a(m, n);
        for (auto& v : a.data)
            v = rng.normal() / std::sqrt(static_cast<double>(n));
        linalg::SvdResult f = linalg::svd(a);
        if (f.sigma.back() > 0.05 * f.sigma.front()) {
            tc.a = std::move(a);
            break;
        }
    }
    if (tc.a.rows == 0)
        throw std::runtime_error("CoordinateTestCase: could not draw a well-conditioned A");
    tc.null_basis = linalg::null_space_basis(tc.a);
    return tc;
}

Vec CoordinateTestCase::phi(const Vec& x) const {
    if (x.size() != dim)
        throw std::invalid_argument("phi: dim mismatch");
    SplitView sp = split_at(x, split);
    Vec s_val = nn::mlp_forward(s1, sp.tail);
    Vec t_val = nn::mlp_forward(t1, sp.tail);
    Vec ya(split);
    for (std::size_t i = 0; i < split; ++i)
        ya[i] = sp.head[i] * s_val[i] + (t_val[i] - t1_at_zero[i]);
    Vec s2_val = nn::mlp_forward(s2, ya);
    Vec t2_val = nn::mlp_forward(t2, ya);
    Vec yb(dim - split);
    for (std::size_t i = 0; i < dim - split; ++i)
        yb[i] = sp.tail[i] * s2_val[i] + (t2_val[i] - t2_at_zero[i]);
    return concat(ya, yb);
}

Vec CoordinateTestCase::phi_inverse(const Vec& y) const {
    if (y.size() != dim)
        throw std::invalid_argument("phi_inverse: dim mismatch");
    SplitView sp = split_at(y, split);
    Vec s2_val = nn::mlp_forward(s2, sp.head);
    Vec t2_val = nn::mlp_forward(t2, sp.head);
    Vec xb(dim - split);
    for (std::size_t i = 0; i < dim - split; ++i)
        xb[i] = (sp.tail[i] - (t2_val[i] - t2_at_zero[i])) / s2_val[i];
    Vec s_val = nn::mlp_forward(s1, xb);
    Vec t_val = nn::mlp_forward(t1, xb);
    Vec xa(split);
    for (std::size_t i = 0; i < split; ++i)
        xa[i] = (sp.head[i] - (t_val[i] - t1_at_zero[i])) / s_val[i];
    return concat(xa, xb);
}

double coordinate_consistency_check(const CoordinateTestCase& tc, const Vec& y) {
    if (y.size() != tc.a.rows)
        throw std::invalid_argument("coordinate_consistency_check: y dim mismatch");
    const std::size_t n = tc.dim, m = tc.a.rows;
    // natural route: solve the completed system [A; N] w = [y | 0]
    Mat full(n, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            full.at(i, j) = tc.a.at(i, j);
    for (std::size_t i = 0; i < n - m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            full.at(m + i, j) = tc.null_basis.at(i, j);
    Vec rhs(n, 0.0);
    std::copy(y.begin(), y.end(), rhs.begin());
    Vec natural = tc.phi_inverse(linalg::solve(full, rhs));
    // linear Moore-Penrose route
    Vec mp = tc.phi_inverse(linalg::matvec(linalg::pinv(tc.a), y));
    return linalg::norm2(linalg::sub(natural, mp));
}

}  // namespace spnn
