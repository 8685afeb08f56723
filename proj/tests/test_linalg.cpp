#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spnn/linalg.hpp"
#include "spnn/rng.hpp"

using namespace spnn;
using namespace spnn::linalg;

namespace {

Mat random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Mat a(r, c);
    for (auto& v : a.data)
        v = rng.normal() * scale;
    return a;
}

// random matrix with rank exactly k, built as a sum of k outer products
Mat random_rank(std::size_t r, std::size_t c, std::size_t k, Rng& rng) {
    Mat a(r, c);
    for (std::size_t t = 0; t < k; ++t) {
        Vec u(r), v(c);
        rng.fill_normal(u);
        rng.fill_normal(v);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                a.at(i, j) += u[i] * v[j];
    }
    return a;
}

double recon_error(const Mat& a, const SvdResult& f) {
    Mat us(f.u.rows, f.sigma.size());
    for (std::size_t i = 0; i < f.u.rows; ++i)
        for (std::size_t j = 0; j < f.sigma.size(); ++j)
            us.at(i, j) = f.u.at(i, j) * f.sigma[j];
    Mat rec = matmul(us, transpose(f.v));
    return frobenius(mat_sub(rec, a));
}

double ortho_error(const Mat& q) {
    Mat g = matmul(transpose(q), q);
    for (std::size_t i = 0; i < g.rows; ++i)
        g.at(i, i) -= 1.0;
    return frobenius(g);
}

double penrose_residuals(const Mat& a, const Mat& ap) {
    const Mat aapa = matmul(matmul(a, ap), a);
    const Mat apaap = matmul(matmul(ap, a), ap);
    const Mat aap = matmul(a, ap);
    const Mat apa = matmul(ap, a);
    double worst = frobenius(mat_sub(aapa, a));
    worst = std::max(worst, frobenius(mat_sub(apaap, ap)));
    worst = std::max(worst, frobenius(mat_sub(aap, transpose(aap))));
    worst = std::max(worst, frobenius(mat_sub(apa, transpose(apa))));
    return worst;
}

}  // namespace

TEST_CASE("svd identity and diagonal") {
    Mat eye = Mat::identity(3);
    SvdResult f = svd(eye);
    for (double s : f.sigma)
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(recon_error(eye, f) < 1e-12);

    Mat d(2, 2);
    d.at(0, 0) = 3.0;  // diag(3, 0)
    f = svd(d);
    CHECK(f.sigma[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(f.sigma[1] == doctest::Approx(0.0));
    CHECK(ortho_error(f.u) < 1e-12);
}

TEST_CASE("svd random 5x3: reconstruction and orthonormality") {
    Rng rng(42);
    Mat a = random_matrix(5, 3, rng);
    SvdResult f = svd(a);
    CHECK(recon_error(a, f) / frobenius(a) < 1e-9);
    CHECK(ortho_error(f.u) < 1e-9);
    CHECK(ortho_error(f.v) < 1e-9);
    for (std::size_t i = 0; i + 1 < f.sigma.size(); ++i)
        CHECK(f.sigma[i] >= f.sigma[i + 1]);
}

TEST_CASE("svd rejects non-finite input") {
    Mat a(2, 2);
    a.at(0, 0) = std::nan("");
    CHECK_THROWS_AS(svd(a), std::invalid_argument);
}

TEST_CASE("pinv hand cases") {
    // idempotent diagonal
    Mat a(2, 2);
    a.at(0, 0) = 1.0;
    Mat ap = pinv(a);
    CHECK(ap.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(ap.at(0, 1)) < 1e-12);
    CHECK(std::abs(ap.at(1, 0)) < 1e-12);
    CHECK(std::abs(ap.at(1, 1)) < 1e-12);

    // row vector [1, 1] -> column [0.5, 0.5] (normal equations by hand:
    // A^T (A A^T)^{-1} = (1,1)^T / 2)
    Mat row(1, 2);
    row.at(0, 0) = 1.0;
    row.at(0, 1) = 1.0;
    ap = pinv(row);
    CHECK(ap.rows == 2);
    CHECK(ap.cols == 1);
    CHECK(ap.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ap.at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));

    // zero matrix -> zero matrix of transposed shape
    Mat z(3, 2);
    ap = pinv(z);
    CHECK(ap.rows == 2);
    CHECK(ap.cols == 3);
    CHECK(frobenius(ap) == 0.0);
}

TEST_CASE("penrose identities over 200 random matrices, mixed ranks") {
    Rng rng(556);
    for (int c = 0; c < 200; ++c) {
        const std::size_t r = 1 + rng.uniform_index(12);
        const std::size_t cc = 1 + rng.uniform_index(12);
        Mat a;
        if (c % 3 == 0) {
            const std::size_t k = 1 + rng.uniform_index(std::min(r, cc));
            a = random_rank(r, cc, k, rng);
        } else {
            a = random_matrix(r, cc, rng);
        }
        Mat ap = pinv(a);
        CHECK(penrose_residuals(a, ap) < 1e-8 * std::max(1.0, frobenius(a)));
        // symmetric projectors
        Mat aap = matmul(a, ap);
        Mat apa = matmul(ap, a);
        CHECK(frobenius(mat_sub(aap, transpose(aap))) < 1e-9);
        CHECK(frobenius(mat_sub(apa, transpose(apa))) < 1e-9);
    }
}

TEST_CASE("pinv(pinv(A)) = A for full-rank A") {
    Rng rng(7);
    for (int c = 0; c < 25; ++c) {
        Mat a = random_matrix(2 + rng.uniform_index(6), 2 + rng.uniform_index(6), rng);
        Mat app = pinv(pinv(a));
        CHECK(frobenius(mat_sub(app, a)) < 1e-7 * std::max(1.0, frobenius(a)));
    }
}

TEST_CASE("linear_back_project hand case and fixed point") {
    // A = [1, 0], x = (1,2), y = (3): A+ = (1,0)^T, x' = x + A+(y-Ax) = (3,2)
    Mat a(1, 2);
    a.at(0, 0) = 1.0;
    Vec x{1.0, 2.0};
    Vec y{3.0};
    Vec xp = linear_back_project(x, y, a);
    CHECK(xp[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(xp[1] == doctest::Approx(2.0).epsilon(1e-12));

    // consistent input is a fixed point
    Rng rng(11);
    Mat b = random_matrix(3, 5, rng);
    Vec x0(5);
    rng.fill_normal(x0);
    Vec yb = matvec(b, x0);
    Vec fixed = linear_back_project(x0, yb, b);
    CHECK(norm2(sub(fixed, x0)) < 1e-9);
}

TEST_CASE("linear_back_project: consistency, closeness, isometry on orthonormal rows") {
    Rng rng(13);
    for (int c = 0; c < 20; ++c) {
        Mat a = random_matrix(3, 6, rng);
        Vec x(6), z(6);
        rng.fill_normal(x);
        rng.fill_normal(z);
        Vec y = matvec(a, z);  // guaranteed in range(A)
        Vec xp = linear_back_project(x, y, a);
        CHECK(norm2(sub(matvec(a, xp), y)) < 1e-8 * std::max(1.0, norm2(y)));
        // displacement orthogonal to null(A)
        Mat nb = null_space_basis(a);
        Vec disp = sub(xp, x);
        for (std::size_t r = 0; r < nb.rows; ++r) {
            Vec nv(nb.cols);
            for (std::size_t j = 0; j < nb.cols; ++j)
                nv[j] = nb.at(r, j);
            CHECK(std::abs(dot(disp, nv)) < 1e-8 * std::max(1.0, norm2(disp)));
        }
    }

    // orthonormal rows: ||x'-x|| = ||y - Ax||
    Rng rng2(17);
    Mat g = random_matrix(4, 4, rng2);
    SvdResult f = svd(g);
    Mat a(2, 4);
    for (std::size_t j = 0; j < 4; ++j) {
        a.at(0, j) = f.v.at(j, 0);
        a.at(1, j) = f.v.at(j, 1);
    }
    Vec x(4), y(2);
    rng2.fill_normal(x);
    rng2.fill_normal(y);
    Vec xp = linear_back_project(x, y, a);
    CHECK(norm2(sub(xp, x)) == doctest::Approx(norm2(sub(y, matvec(a, x)))).epsilon(1e-9));
}

TEST_CASE("iterative_back_project") {
    Rng rng(19);
    Mat a = random_matrix(3, 5, rng);
    Vec x0(5), z(5);
    rng.fill_normal(x0);
    rng.fill_normal(z);
    Vec y = matvec(a, z);

    // H = A+, lambda = 1, one iteration == linear_back_project
    Mat h = pinv(a);
    Vec one_step = iterative_back_project(x0, y, a, h, 1.0, 1);
    Vec lbp = linear_back_project(x0, y, a);
    CHECK(norm2(sub(one_step, lbp)) < 1e-10);

    // zero residual -> unchanged for any H
    Mat ht = transpose(a);
    Vec yc = matvec(a, x0);
    Vec same = iterative_back_project(x0, yc, a, ht, 0.3, 50);
    CHECK(norm2(sub(same, x0)) < 1e-12);

    // H = A^T, small lambda, 200 iters on a well-conditioned system
    Vec xk = iterative_back_project(x0, y, a, ht, 0.05, 200);
    CHECK(norm2(sub(matvec(a, xk), y)) < 1e-4);

    CHECK_THROWS_AS(iterative_back_project(x0, y, a, ht, -1.0, 5), std::invalid_argument);
}

TEST_CASE("iterative_back_project reports divergence") {
    Mat a(1, 1);
    a.at(0, 0) = 1.0;
    Mat h(1, 1);
    h.at(0, 0) = -5.0;  // wrong sign kernel with a huge step
    CHECK_THROWS_AS(iterative_back_project({0.0}, {1.0}, a, h, 1.0, 100), std::runtime_error);
}

TEST_CASE("cayley: zero generator, 2x2 hand case, random orthogonality") {
    SkewGenerator z(4);
    Mat u = cayley(z);
    CHECK(frobenius(mat_sub(u, Mat::identity(4))) == 0.0);

    SkewGenerator g2(2);
    g2.params[0] = 1.0;
    u = cayley(g2);
    // (I-S)(I+S)^{-1} with S = [[0,1],[-1,0]] -> [[0,-1],[1,0]]
    CHECK(u.at(0, 0) == doctest::Approx(0.0));
    CHECK(u.at(0, 1) == doctest::Approx(-1.0));
    CHECK(u.at(1, 0) == doctest::Approx(1.0));
    CHECK(u.at(1, 1) == doctest::Approx(0.0));

    Rng rng(23);
    for (int c = 0; c < 100; ++c) {
        const std::size_t dim = 2 + rng.uniform_index(15);
        SkewGenerator g(dim);
        rng.fill_normal(g.params);
        Mat uc = cayley(g);
        CHECK(ortho_error(uc) < 1e-10);
        // skew invariant is exact by construction
        Mat s = g.materialize();
        Mat st = transpose(s);
        for (std::size_t i = 0; i < s.data.size(); ++i)
            CHECK(s.data[i] == -st.data[i]);
    }
}

TEST_CASE("cayley_grad matches finite differences") {
    Rng rng(29);

    // zero upstream -> zero gradient
    SkewGenerator g(3);
    rng.fill_normal(g.params);
    Mat zero_up(3, 3);
    Vec grad = cayley_grad(g, zero_up);
    for (double v : grad)
        CHECK(v == 0.0);

    auto fd_check = [&](SkewGenerator gen, const Mat& up, double tol) {
        Vec analytic = cayley_grad(gen, up);
        const double eps = 1e-6;
        for (std::size_t k = 0; k < gen.param_count(); ++k) {
            SkewGenerator gp = gen, gm = gen;
            gp.params[k] += eps;
            gm.params[k] -= eps;
            Mat up_ = up;
            double fp = 0.0, fm = 0.0;
            Mat cp = cayley(gp), cm = cayley(gm);
            for (std::size_t i = 0; i < up_.data.size(); ++i) {
                fp += up_.data[i] * cp.data[i];
                fm += up_.data[i] * cm.data[i];
            }
            const double numeric = (fp - fm) / (2.0 * eps);
            CHECK(std::abs(analytic[k] - numeric) <=
                  tol * std::max({1.0, std::abs(analytic[k]), std::abs(numeric)}));
        }
    };

    SkewGenerator g2(2);  // param 0, upstream [[0,1],[-1,0]]
    Mat up2(2, 2);
    up2.at(0, 1) = 1.0;
    up2.at(1, 0) = -1.0;
    fd_check(g2, up2, 1e-6);

    SkewGenerator g8(8);
    rng.fill_normal(g8.params);
    Mat up8(8, 8);
    for (auto& v : up8.data)
        v = rng.normal();
    fd_check(g8, up8, 1e-5);
}

TEST_CASE("pixel_unshuffle") {
    // factor 1 is the identity
    Vec x{1, 2, 3, 4, 5, 6};
    CHECK(pixel_unshuffle(x, 1, 2, 3, 1) == x);

    // (1,2,2) row-major (a,b,c,d), factor 2 -> four channels at 1x1
    Vec abcd{10, 20, 30, 40};
    Vec out = pixel_unshuffle(abcd, 1, 2, 2, 2);
    CHECK(out == Vec{10, 20, 30, 40});

    // round trip is bit-identical, and the permutation is norm-preserving
    Rng rng(31);
    Vec img(2 * 4 * 4);
    rng.fill_normal(img);
    Vec un = pixel_unshuffle(img, 2, 4, 4, 2);
    CHECK(norm2(un) == doctest::Approx(norm2(img)).epsilon(1e-14));
    CHECK(pixel_shuffle(un, 2, 4, 4, 2) == img);

    // bijection on the index set, exhaustively at 4x4
    Vec idx(16);
    for (std::size_t i = 0; i < 16; ++i)
        idx[i] = static_cast<double>(i);
    Vec perm = pixel_unshuffle(idx, 1, 4, 4, 2);
    std::vector<bool> seen(16, false);
    for (double v : perm) {
        auto i = static_cast<std::size_t>(v);
        CHECK(!seen[i]);
        seen[i] = true;
    }

    CHECK_THROWS_AS(pixel_unshuffle(x, 1, 2, 3, 2), std::invalid_argument);
}

TEST_CASE("parallel matmul matches the serial reference bit for bit") {
    Rng rng(37);
    for (std::size_t n : {3, 17, 64, 90}) {
        Mat a = random_matrix(n, n + 1, rng);
        Mat b = random_matrix(n + 1, n + 2, rng);
        Mat fast = matmul(a, b);
        Mat ref = serial::matmul(a, b);
        CHECK(fast.data == ref.data);
        Vec x(n + 1);
        rng.fill_normal(x);
        CHECK(matvec(a, x) == serial::matvec(a, x));
    }
}

TEST_CASE("solve recovers against matmul") {
    Rng rng(41);
    Mat a = random_matrix(6, 6, rng);
    for (std::size_t i = 0; i < 6; ++i)
        a.at(i, i) += 3.0;  // keep it well-conditioned
    Mat x = random_matrix(6, 2, rng);
    Mat b = matmul(a, x);
    Mat xs = solve(a, b);
    CHECK(frobenius(mat_sub(xs, x)) < 1e-10);
}
