#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace spnn::linalg {

using Vec = std::vector<double>;

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;  // row-major, rows*cols

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Mat(std::size_t r, std::size_t c, Vec d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Mat: data length does not match shape");
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            m.at(i, i) = 1.0;
        return m;
    }
};

struct SvdResult {
    Mat u;      // m x k, orthonormal columns
    Vec sigma;  // length k, non-increasing, non-negative
    Mat v;      // n x k, orthonormal columns
};

// Skew-symmetric matrix generator: params fill the strict upper triangle
// row by row; the lower triangle is the negation.
struct SkewGenerator {
    std::size_t dim = 0;
    Vec params;  // length dim*(dim-1)/2

    SkewGenerator() = default;
    explicit SkewGenerator(std::size_t d) : dim(d), params(d * (d - 1) / 2, 0.0) {}

    std::size_t param_count() const { return dim * (dim - 1) / 2; }
    Mat materialize() const;
};

// Shewchuk-style exact accumulator: the result depends only on the multiset
// of addends, never on their order, so batch reductions stay invariant under
// permutation and chunking.
class ExactSum {
public:
    void add(double x);
    void add(const ExactSum& other);
    double value() const;
    void reset() { partials_.clear(); }

private:
    std::vector<double> partials_;  // non-overlapping expansion
};

// ---- elementwise / BLAS-1 ----

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
double norm_inf(const Vec& a);
Vec add(const Vec& a, const Vec& b);
Vec sub(const Vec& a, const Vec& b);
Vec scale(const Vec& a, double s);
void axpy(double alpha, const Vec& x, Vec& y);  // y += alpha*x
bool all_finite(const Vec& a);
bool all_finite(const Mat& a);

// ---- matrix kernels ----
// The unqualified entry points dispatch to OpenMP loops above a size
// threshold; the serial:: versions are the reference implementations the
// tests and the benchmark compare against. Both produce bit-identical
// results (each output element is one fixed-order dot product).

namespace serial {
Mat matmul(const Mat& a, const Mat& b);
Vec matvec(const Mat& a, const Vec& x);
}  // namespace serial

Mat matmul(const Mat& a, const Mat& b);
Vec matvec(const Mat& a, const Vec& x);
Vec matvec_t(const Mat& a, const Vec& x);  // A^T x without materializing A^T
Mat transpose(const Mat& a);
Mat mat_add(const Mat& a, const Mat& b);
Mat mat_sub(const Mat& a, const Mat& b);
double frobenius(const Mat& a);

// Solve A X = B by Gaussian elimination with partial pivoting (A square).
Mat solve(const Mat& a, const Mat& b);
Vec solve(const Mat& a, const Vec& b);

// ---- decompositions and derived operators ----

// One-sided Jacobi SVD. Thin factors, singular values sorted descending,
// U columns completed to an orthonormal set when the rank is deficient.
// Throws on non-finite input or if the sweep limit is exhausted.
SvdResult svd(const Mat& a);

// Moore-Penrose pseudo-inverse. Singular values <= rcond*sigma_max are
// treated as zero; rcond < 0 selects max(m,n)*eps.
Mat pinv(const Mat& a, double rcond = -1.0);

// Orthonormal rows spanning null(A); (n - rank) x n, possibly 0 x n.
Mat null_space_basis(const Mat& a);

// x' = x + pinv(A)(y - Ax): closest point to x with Ax' = y when y is in
// the range of A.
Vec linear_back_project(const Vec& x, const Vec& y, const Mat& a);

// x_{k+1} = x_k + lambda * H (y - A x_k), run for exactly `iters` updates.
// Throws if the residual norm grows 10x above its initial value.
Vec iterative_back_project(const Vec& x0, const Vec& y, const Mat& a, const Mat& h,
                           double lambda, std::size_t iters);

// Cayley transform U = (I - S)(I + S)^{-1}; exactly orthogonal up to the
// linear solve's rounding.
Mat cayley(const SkewGenerator& gen);

// Gradient of a scalar loss w.r.t. the free skew parameters, given
// upstream = dL/dU. Uses dU = -(I + U) dS (I + S)^{-1}.
Vec cayley_grad(const SkewGenerator& gen, const Mat& upstream);

// Space-to-depth permutation on a flat (c,h,w) row-major tensor:
// out[c*f^2 + i*f + j, h, w] = in[c, h*f + i, w*f + j].
Vec pixel_unshuffle(const Vec& x, std::size_t c, std::size_t h, std::size_t w, std::size_t factor);
// Exact inverse: input is shaped (c*f^2, h/f, w/f) with the (c,h,w) and
// factor of the forward call.
Vec pixel_shuffle(const Vec& x, std::size_t c, std::size_t h, std::size_t w, std::size_t factor);

}  // namespace spnn::linalg
