#include "spnn/linalg.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "spnn/parallel.hpp"

namespace spnn::linalg {

namespace {

void check_shapes(bool ok, const char* what) {
    if (!ok)
        throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

constexpr std::size_t kParallelFlops = 32 * 1024;

}  // namespace

void ExactSum::add(double x) {
    std::size_t used = 0;
    for (double y : partials_) {
        if (std::abs(x) < std::abs(y))
            std::swap(x, y);
        const double hi = x + y;
        const double lo = y - (hi - x);
        if (lo != 0.0)
            partials_[used++] = lo;
        x = hi;
    }
    partials_.resize(used);
    partials_.push_back(x);
}

void ExactSum::add(const ExactSum& other) {
    for (double p : other.partials_)
        add(p);
}

double ExactSum::value() const {
    double s = 0.0;
    for (double p : partials_)  // ascending magnitude by construction
        s += p;
    return s;
}

Mat SkewGenerator::materialize() const {
    Mat s(dim, dim);
    std::size_t k = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = i + 1; j < dim; ++j, ++k) {
            s.at(i, j) = params[k];
            s.at(j, i) = -params[k];
        }
    }
    return s;
}

double dot(const Vec& a, const Vec& b) {
    check_shapes(a.size() == b.size(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const Vec& a) {
    double m = 0.0;
    for (double x : a)
        m = std::max(m, std::abs(x));
    return m;
}

Vec add(const Vec& a, const Vec& b) {
    check_shapes(a.size() == b.size(), "add");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        r[i] = a[i] + b[i];
    return r;
}

Vec sub(const Vec& a, const Vec& b) {
    check_shapes(a.size() == b.size(), "sub");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        r[i] = a[i] - b[i];
    return r;
}

Vec scale(const Vec& a, double s) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        r[i] = a[i] * s;
    return r;
}

void axpy(double alpha, const Vec& x, Vec& y) {
    check_shapes(x.size() == y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] += alpha * x[i];
}

bool all_finite(const Vec& a) {
    for (double x : a)
        if (!std::isfinite(x))
            return false;
    return true;
}

bool all_finite(const Mat& a) { return all_finite(a.data); }

namespace serial {

Mat matmul(const Mat& a, const Mat& b) {
    check_shapes(a.cols == b.rows, "matmul");
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = a.at(i, k);
            for (std::size_t j = 0; j < b.cols; ++j)
                c.at(i, j) += av * b.at(k, j);
        }
    }
    return c;
}

Vec matvec(const Mat& a, const Vec& x) {
    check_shapes(a.cols == x.size(), "matvec");
    Vec y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j)
            acc += a.at(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

}  // namespace serial

Mat matmul(const Mat& a, const Mat& b) {
    check_shapes(a.cols == b.rows, "matmul");
    if (a.rows * a.cols * b.cols < kParallelFlops)
        return serial::matmul(a, b);
    Mat c(a.rows, b.cols);
    parallel_for(a.rows, [&](std::size_t i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = a.at(i, k);
            for (std::size_t j = 0; j < b.cols; ++j)
                c.at(i, j) += av * b.at(k, j);
        }
    });
    return c;
}

Vec matvec(const Mat& a, const Vec& x) {
    check_shapes(a.cols == x.size(), "matvec");
    if (a.rows * a.cols < kParallelFlops)
        return serial::matvec(a, x);
    Vec y(a.rows, 0.0);
    parallel_for(a.rows, [&](std::size_t i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j)
            acc += a.at(i, j) * x[j];
        y[i] = acc;
    });
    return y;
}

Vec matvec_t(const Mat& a, const Vec& x) {
    check_shapes(a.rows == x.size(), "matvec_t");
    Vec y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double xi = x[i];
        for (std::size_t j = 0; j < a.cols; ++j)
            y[j] += a.at(i, j) * xi;
    }
    return y;
}

Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            t.at(j, i) = a.at(i, j);
    return t;
}

Mat mat_add(const Mat& a, const Mat& b) {
    check_shapes(a.rows == b.rows && a.cols == b.cols, "mat_add");
    Mat c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i)
        c.data[i] += b.data[i];
    return c;
}

Mat mat_sub(const Mat& a, const Mat& b) {
    check_shapes(a.rows == b.rows && a.cols == b.cols, "mat_sub");
    Mat c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i)
        c.data[i] -= b.data[i];
    return c;
}

double frobenius(const Mat& a) { return norm2(a.data); }

Mat solve(const Mat& a, const Mat& b) {
    check_shapes(a.rows == a.cols && a.rows == b.rows, "solve");
    const std::size_t n = a.rows;
    Mat lu = a;
    Mat x = b;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        double best = std::abs(lu.at(col, col));
        for (std::size_t i = col + 1; i < n; ++i) {
            double v = std::abs(lu.at(i, col));
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (best == 0.0)
            throw std::runtime_error("solve: singular matrix");
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j)
                std::swap(lu.at(col, j), lu.at(piv, j));
            for (std::size_t j = 0; j < x.cols; ++j)
                std::swap(x.at(col, j), x.at(piv, j));
        }
        const double d = lu.at(col, col);
        for (std::size_t i = col + 1; i < n; ++i) {
            const double f = lu.at(i, col) / d;
            if (f == 0.0)
                continue;
            lu.at(i, col) = 0.0;
            for (std::size_t j = col + 1; j < n; ++j)
                lu.at(i, j) -= f * lu.at(col, j);
            for (std::size_t j = 0; j < x.cols; ++j)
                x.at(i, j) -= f * x.at(col, j);
        }
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t j = 0; j < x.cols; ++j) {
            double acc = x.at(ii, j);
            for (std::size_t k = ii + 1; k < n; ++k)
                acc -= lu.at(ii, k) * x.at(k, j);
            x.at(ii, j) = acc / lu.at(ii, ii);
        }
    }
    return x;
}

Vec solve(const Mat& a, const Vec& b) {
    Mat rhs(b.size(), 1, b);
    Mat x = solve(a, rhs);
    return x.data;
}

namespace {

// Hestenes one-sided Jacobi on the columns of B (m >= n assumed by caller).
SvdResult svd_tall(const Mat& a) {
    const std::size_t m = a.rows, n = a.cols;
    Mat b = a;
    Mat v = Mat::identity(n);

    constexpr int kMaxSweeps = 60;
    constexpr double kConvTol = 1e-12;  // relative off-diagonal threshold

    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b.at(i, p), bq = b.at(i, q);
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if (alpha == 0.0 || beta == 0.0)
                    continue;
                if (std::abs(gamma) <= kConvTol * std::sqrt(alpha * beta))
                    continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b.at(i, p), bq = b.at(i, q);
                    b.at(i, p) = c * bp - s * bq;
                    b.at(i, q) = s * bp + c * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = c * vp - s * vq;
                    v.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated)
            break;
    }
    if (sweep == kMaxSweeps)
        throw std::runtime_error("svd: no convergence after " + std::to_string(kMaxSweeps) +
                                 " sweeps");

    Vec sigma(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            acc += b.at(i, j) * b.at(i, j);
        sigma[j] = std::sqrt(acc);
    }

    // sort descending, permuting columns of B and V
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    Mat u(m, n);
    Mat vs(n, n);
    Vec sig(n);
    double smax = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        smax = std::max(smax, sigma[order[j]]);
    const double rank_tol = smax * static_cast<double>(std::max(m, n)) *
                            std::numeric_limits<double>::epsilon();
    std::size_t filled = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        sig[j] = sigma[src];
        for (std::size_t i = 0; i < n; ++i)
            vs.at(i, j) = v.at(i, src);
        if (sig[j] > rank_tol && sig[j] > 0.0) {
            for (std::size_t i = 0; i < m; ++i)
                u.at(i, j) = b.at(i, src) / sig[j];
            filled = j + 1;
        }
    }

    // complete U to orthonormal columns for zero singular values
    for (std::size_t j = filled; j < n; ++j) {
        Vec cand(m, 0.0);
        bool ok = false;
        for (std::size_t e = 0; e < m && !ok; ++e) {
            std::fill(cand.begin(), cand.end(), 0.0);
            cand[e] = 1.0;
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    proj += u.at(i, k) * cand[i];
                for (std::size_t i = 0; i < m; ++i)
                    cand[i] -= proj * u.at(i, k);
            }
            double nrm = norm2(cand);
            if (nrm > 0.5) {  // basis vector not mostly inside span
                for (std::size_t i = 0; i < m; ++i)
                    u.at(i, j) = cand[i] / nrm;
                ok = true;
            }
        }
        if (!ok)
            throw std::runtime_error("svd: failed to complete U basis");
    }

    return SvdResult{std::move(u), std::move(sig), std::move(vs)};
}

}  // namespace

SvdResult svd(const Mat& a) {
    if (a.rows == 0 || a.cols == 0)
        throw std::invalid_argument("svd: empty matrix");
    if (!all_finite(a))
        throw std::invalid_argument("svd: non-finite input");
    if (a.rows >= a.cols)
        return svd_tall(a);
    SvdResult st = svd_tall(transpose(a));
    return SvdResult{std::move(st.v), std::move(st.sigma), std::move(st.u)};
}

Mat pinv(const Mat& a, double rcond) {
    SvdResult f = svd(a);
    if (rcond < 0.0)
        rcond = static_cast<double>(std::max(a.rows, a.cols)) *
                std::numeric_limits<double>::epsilon();
    const double smax = f.sigma.empty() ? 0.0 : f.sigma.front();
    const double cut = rcond * smax;
    const std::size_t k = f.sigma.size();
    // A+ = V diag(1/sigma) U^T
    Mat vsi(a.cols, k);
    for (std::size_t i = 0; i < a.cols; ++i)
        for (std::size_t j = 0; j < k; ++j)
            vsi.at(i, j) = (f.sigma[j] > cut && f.sigma[j] > 0.0)
                               ? f.v.at(i, j) / f.sigma[j]
                               : 0.0;
    return matmul(vsi, transpose(f.u));
}

Mat null_space_basis(const Mat& a) {
    SvdResult f = svd(a);
    const std::size_t n = a.cols;
    const double smax = f.sigma.empty() ? 0.0 : f.sigma.front();
    const double tol = smax * static_cast<double>(std::max(a.rows, a.cols)) *
                       std::numeric_limits<double>::epsilon();
    std::size_t rank = 0;
    for (double s : f.sigma)
        if (s > tol && s > 0.0)
            ++rank;
    // extend the first `rank` columns of V to an orthonormal basis of R^n;
    // the added vectors span the complement of the row space
    Mat basis(n, n);
    for (std::size_t j = 0; j < rank; ++j)
        for (std::size_t i = 0; i < n; ++i)
            basis.at(i, j) = f.v.at(i, j);
    std::size_t have = rank;
    for (std::size_t e = 0; e < n && have < n; ++e) {
        Vec cand(n, 0.0);
        cand[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {  // re-orthogonalize once
            for (std::size_t k = 0; k < have; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    proj += basis.at(i, k) * cand[i];
                for (std::size_t i = 0; i < n; ++i)
                    cand[i] -= proj * basis.at(i, k);
            }
        }
        const double nrm = norm2(cand);
        if (nrm > 0.5) {
            for (std::size_t i = 0; i < n; ++i)
                basis.at(i, have) = cand[i] / nrm;
            ++have;
        }
    }
    if (have != n)
        throw std::runtime_error("null_space_basis: failed to complete basis");
    Mat null_rows(n - rank, n);
    for (std::size_t r = 0; r < n - rank; ++r)
        for (std::size_t i = 0; i < n; ++i)
            null_rows.at(r, i) = basis.at(i, rank + r);
    return null_rows;
}

Vec linear_back_project(const Vec& x, const Vec& y, const Mat& a) {
    check_shapes(a.cols == x.size() && a.rows == y.size(), "linear_back_project");
    Vec residual = sub(y, matvec(a, x));
    Vec corr = matvec(pinv(a), residual);
    return add(x, corr);
}

Vec iterative_back_project(const Vec& x0, const Vec& y, const Mat& a, const Mat& h,
                           double lambda, std::size_t iters) {
    check_shapes(a.cols == x0.size() && a.rows == y.size(), "iterative_back_project");
    check_shapes(h.rows == a.cols && h.cols == a.rows, "iterative_back_project: H");
    if (lambda <= 0.0)
        throw std::invalid_argument("iterative_back_project: lambda must be positive");
    Vec x = x0;
    const double init_err = norm2(sub(y, matvec(a, x)));
    for (std::size_t k = 0; k < iters; ++k) {
        Vec residual = sub(y, matvec(a, x));
        const double err = norm2(residual);
        if (err > 10.0 * init_err && err > 1e-12)
            throw std::runtime_error("iterative_back_project: diverged at iteration " +
                                     std::to_string(k) + " (residual " + std::to_string(err) +
                                     " vs initial " + std::to_string(init_err) + ")");
        axpy(lambda, matvec(h, residual), x);
    }
    return x;
}

Mat cayley(const SkewGenerator& gen) {
    Mat s = gen.materialize();
    Mat m = s;  // I + S
    Mat nmat = s;
    for (std::size_t i = 0; i < gen.dim; ++i) {
        m.at(i, i) += 1.0;
        for (std::size_t j = 0; j < gen.dim; ++j)
            nmat.at(i, j) = -nmat.at(i, j);
        nmat.at(i, i) += 1.0;  // I - S
    }
    // (I - S)(I + S)^{-1} == (I + S)^{-1}(I - S): the factors commute
    return solve(m, nmat);
}

Vec cayley_grad(const SkewGenerator& gen, const Mat& upstream) {
    check_shapes(upstream.rows == gen.dim && upstream.cols == gen.dim, "cayley_grad");
    Mat u = cayley(gen);
    Mat s = gen.materialize();
    Mat m = s;
    for (std::size_t i = 0; i < gen.dim; ++i)
        m.at(i, i) += 1.0;  // I + S
    // dL/dS = -(I+U)^T * upstream * (I+S)^{-T}; with X^T = (I+S)^{-1} upstream^T
    Mat xt = solve(m, transpose(upstream));
    Mat iu = u;
    for (std::size_t i = 0; i < gen.dim; ++i)
        iu.at(i, i) += 1.0;  // I + U
    Mat g = matmul(transpose(iu), transpose(xt));
    Vec grad(gen.param_count());
    std::size_t k = 0;
    for (std::size_t i = 0; i < gen.dim; ++i)
        for (std::size_t j = i + 1; j < gen.dim; ++j, ++k)
            grad[k] = -(g.at(i, j) - g.at(j, i));
    return grad;
}

Vec pixel_unshuffle(const Vec& x, std::size_t c, std::size_t h, std::size_t w,
                    std::size_t factor) {
    if (factor == 0 || h % factor != 0 || w % factor != 0)
        throw std::invalid_argument("pixel_unshuffle: dimensions not divisible by factor");
    check_shapes(x.size() == c * h * w, "pixel_unshuffle");
    const std::size_t ho = h / factor, wo = w / factor;
    Vec out(x.size());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < factor; ++i)
            for (std::size_t j = 0; j < factor; ++j) {
                const std::size_t co = ch * factor * factor + i * factor + j;
                for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t z = 0; z < wo; ++z)
                        out[(co * ho + y) * wo + z] =
                            x[(ch * h + y * factor + i) * w + z * factor + j];
            }
    return out;
}

Vec pixel_shuffle(const Vec& x, std::size_t c, std::size_t h, std::size_t w,
                  std::size_t factor) {
    if (factor == 0 || h % factor != 0 || w % factor != 0)
        throw std::invalid_argument("pixel_shuffle: dimensions not divisible by factor");
    check_shapes(x.size() == c * h * w, "pixel_shuffle");
    const std::size_t ho = h / factor, wo = w / factor;
    Vec out(x.size());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < factor; ++i)
            for (std::size_t j = 0; j < factor; ++j) {
                const std::size_t co = ch * factor * factor + i * factor + j;
                for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t z = 0; z < wo; ++z)
                        out[(ch * h + y * factor + i) * w + z * factor + j] =
                            x[(co * ho + y) * wo + z];
            }
    return out;
}

}  // namespace spnn::linalg
