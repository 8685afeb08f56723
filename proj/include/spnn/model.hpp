#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "spnn/linalg.hpp"
#include "spnn/nn.hpp"
#include "spnn/rng.hpp"

namespace spnn {

using linalg::Mat;
using linalg::Vec;

// A point in completed space: [range | null]. The null part concatenates the
// per-block discarded components, last block first (the order the inverse
// walk consumes them).
struct CompletionPoint {
    Vec range;
    Vec null;

    std::size_t total_dim() const { return range.size() + null.size(); }
};

// Space-to-depth stage; keeps dimensionality, permutes layout.
struct Reshape {
    std::size_t c = 0, h = 0, w = 0, factor = 1;
    std::size_t dim() const { return c * h * w; }
};

// Affine surjective coupling block. Forward: rotate by U, split into
// [x0 | x1], emit y = x0 * s(x1) + t(x1) and discard x1. The scale head
// keeps s strictly positive so the affine step is always invertible in x0.
struct SurjectiveBlock {
    std::size_t in_dim = 0;   // D
    std::size_t out_dim = 0;  // d < D
    linalg::SkewGenerator mixer;
    nn::Mlp s_net;   // R^{D-d} -> R^d, scale head
    nn::Mlp t_net;   // R^{D-d} -> R^d
    nn::Mlp r_net;   // R^d -> R^{D-d}, trained null predictor
    nn::Mlp r_rand;  // same shape, frozen at its random init (ablation mode)

    Mat u;  // materialized Cayley matrix; call refresh_u() after touching mixer

    std::size_t null_dim() const { return in_dim - out_dim; }
    void refresh_u() { u = linalg::cayley(mixer); }
};

using Stage = std::variant<Reshape, SurjectiveBlock>;

struct SpnnInit {
    std::size_t hidden_width = 64;
    std::size_t hidden_depth = 2;
    nn::Act act = nn::Act::Tanh;
    bool zero_st = false;  // leave s == 1, t == 0: the model is exactly linear
};

// How the pseudo-inverse resolves the discarded coordinates.
struct PinvMode {
    enum class Kind { LearnedR, Natural, Constant, RandomR };
    Kind kind = Kind::Natural;
    Vec z;  // Constant: full null vector, last block first

    static PinvMode learned() { return {Kind::LearnedR, {}}; }
    static PinvMode natural() { return {Kind::Natural, {}}; }
    static PinvMode constant(Vec z) { return {Kind::Constant, std::move(z)}; }
    static PinvMode random_r() { return {Kind::RandomR, {}}; }
};

const char* pinv_mode_name(PinvMode::Kind k);

struct SpnnModel {
    std::vector<Stage> stages;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;

    std::size_t null_dim() const { return input_dim - output_dim; }
    std::size_t block_count() const;

    // Blocks only (flat vectors). out_dims gives each block's output size.
    static SpnnModel make_flat(std::size_t input_dim, const std::vector<std::size_t>& out_dims,
                               const SpnnInit& init, Rng& rng);
    // pixel_unshuffle(factor) on a (c,h,w) input, then blocks on the flat result.
    static SpnnModel make_image(std::size_t c, std::size_t h, std::size_t w, std::size_t factor,
                                const std::vector<std::size_t>& out_dims, const SpnnInit& init,
                                Rng& rng);

    // Re-materializes every block's U and the cached q(0). Must be called
    // after any direct mutation of forward parameters; set_forward_params
    // does it automatically.
    void refresh();

    std::size_t forward_param_count() const;  // mixer + s + t, per block
    std::size_t r_param_count() const;
    void get_forward_params(double* out) const;
    void set_forward_params(const double* in);
    void get_r_params(double* out) const;
    void set_r_params(const double* in);
    std::uint64_t forward_checksum() const;  // FNV-1a over the raw bytes

    // q(0): the null coordinates of the completion of the origin.
    const Vec& natural_null() const { return q0_; }
    const Vec& origin_range() const { return g0_; }  // g(0)

private:
    Vec q0_, g0_;
};

// ---- tapes and gradients ----

struct BlockForwardTape {
    Vec x, xt;  // input and U x
    nn::MlpTape s_tape, t_tape;
    Vec y;
};

struct BlockPinvTape {
    Vec y;      // block-output-side input
    Vec x1hat;  // chosen null
    bool through_r = false;
    bool r_learned = false;
    nn::MlpTape r_tape;
    nn::MlpTape s_tape, t_tape;
    Vec x0hat, xt, x;
};

struct ModelForwardTape {
    Vec input;
    std::vector<std::optional<BlockForwardTape>> per_stage;
};

struct ModelPinvTape {
    Vec y, x;
    std::vector<std::optional<BlockPinvTape>> per_stage;
};

struct BlockGrads {
    Mat du;  // accumulated dL/dU; mapped to skew params once, at flatten time
    nn::MlpGrads s, t, r;
};

struct ModelGrads {
    std::vector<BlockGrads> blocks;  // one per block, stage order

    static ModelGrads zeros_like(const SpnnModel& m);
    void add(const ModelGrads& other);
    // cayley_grad is linear in the upstream, so converting the summed dU is
    // exact; needs the model for the mixer parameters.
    void flatten_forward(const SpnnModel& m, double* out) const;
    void flatten_r(double* out) const;
};

// ---- block ops ----

Vec block_forward(const SurjectiveBlock& b, const Vec& x, Vec* null_out = nullptr,
                  BlockForwardTape* tape = nullptr);
// Learned-r single-block pseudo-inverse: a structural right inverse of
// block_forward for any r.
Vec block_pinv(const SurjectiveBlock& b, const Vec& y);

// ---- model ops ----

Vec model_forward(const SpnnModel& m, const Vec& x);
CompletionPoint completion(const SpnnModel& m, const Vec& x, ModelForwardTape* tape = nullptr);
Vec completion_inverse(const SpnnModel& m, const CompletionPoint& p);

Vec pinv(const SpnnModel& m, const Vec& y, const PinvMode& mode,
         ModelPinvTape* tape = nullptr);

// Backward through the completion: upstream on [range | null] -> gradient
// w.r.t. the input; parameter grads accumulated when grads != nullptr.
Vec completion_backward(const SpnnModel& m, const ModelForwardTape& tape, const Vec& up_range,
                        const Vec& up_null, ModelGrads* grads);

// Backward through a pinv chain: upstream on the reconstructed x -> gradient
// w.r.t. y. r parameter grads are accumulated only for the learned r.
Vec pinv_backward(const SpnnModel& m, const ModelPinvTape& tape, const Vec& up_x,
                  ModelGrads* grads);

// Brute-force realization of the natural pseudo-inverse: multi-start descent
// over the null coordinates z of x = G^{-1}([y|z]), minimizing
// ||G(x) - G(0)||^2 by evaluation only. Requires null_dim <= 8. Throws if
// the restarts disagree by more than 1e-4 (a completion bug, not a tuning
// issue).
Vec preimage_oracle(const SpnnModel& m, const Vec& y, std::size_t restarts = 32,
                    std::uint64_t seed = 556);

// Matrix of a zero_st model, recovered column by column (g is linear there).
Mat induced_linear_matrix(const SpnnModel& m);

// ---- coordinate consistency (g = A o phi) ----

// phi is a two-layer zero-anchored affine coupling bijection (phi(0) = 0);
// A is full row rank with null-space basis rows in null_basis.
struct CoordinateTestCase {
    std::size_t dim = 0;    // n
    std::size_t split = 0;  // first coupling's pass-through boundary
    nn::Mlp s1, t1, s2, t2;
    Vec t1_at_zero, t2_at_zero;
    Mat a;           // m x n
    Mat null_basis;  // (n - m) x n, orthonormal rows spanning null(A)

    static CoordinateTestCase make(std::size_t n, std::size_t m, std::size_t width, Rng& rng);

    Vec phi(const Vec& x) const;
    Vec phi_inverse(const Vec& y) const;
};

// || phi^{-1}(solve([A;N], [y|0])) - phi^{-1}(pinv(A) y) ||: the natural
// pseudo-inverse of A o phi against the linear Moore-Penrose route.
double coordinate_consistency_check(const CoordinateTestCase& tc, const Vec& y);

}  // namespace spnn
