// Compares the OpenMP kernels against their serial references: wall time and
// bitwise agreement. Thread count comes from OMP_NUM_THREADS.

#include <chrono>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "spnn/losses.hpp"
#include "spnn/model.hpp"
#include "spnn/parallel.hpp"

using namespace spnn;
using linalg::Mat;
using linalg::Vec;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <class Fn>
double time_ms(Fn&& fn, int reps) {
    fn();  // warm
    const double t0 = now_ms();
    for (int i = 0; i < reps; ++i)
        fn();
    return (now_ms() - t0) / reps;
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

void bench_matmul() {
    Rng rng(1);
    std::printf("%-28s %10s %12s %12s %9s %6s\n", "kernel", "size", "serial ms", "parallel ms",
                "speedup", "match");
    for (std::size_t n : {64, 128, 256}) {
        Mat a(n, n), b(n, n);
        rng.fill_normal(a.data);
        rng.fill_normal(b.data);
        Mat ref;
        const double ts = time_ms([&] { ref = linalg::serial::matmul(a, b); }, 5);
        Mat fast;
        const double tp = time_ms([&] { fast = linalg::matmul(a, b); }, 5);
        std::printf("%-28s %7zux%-3zu %12.3f %12.3f %8.2fx %6s\n", "matmul", n, n, ts, tp,
                    ts / tp, fast.data == ref.data ? "yes" : "NO");
    }
}

void bench_batch_loss() {
    SpnnInit init;
    Rng mk(2);
    SpnnModel m = SpnnModel::make_flat(16, {8, 4}, init, mk);
    Rng rng(3);
    std::vector<Vec> xs(256, Vec(16));
    for (auto& x : xs)
        rng.fill_normal(x);

    set_threads(1);
    double serial_value = 0.0;
    const double ts =
        time_ms([&] { serial_value = train::loss_stability(m, xs).value; }, 3);
    set_threads(max_threads() > 1 ? max_threads() : 2);
    double par_value = 0.0;
    const double tp = time_ms([&] { par_value = train::loss_stability(m, xs).value; }, 3);
    std::printf("%-28s %10zu %12.3f %12.3f %8.2fx %6s\n", "stability loss (batch)", xs.size(),
                ts, tp, ts / tp, serial_value == par_value ? "yes" : "NO");
}

void bench_pinv_sweep() {
    Rng rng(4);
    std::vector<Mat> mats;
    for (int i = 0; i < 64; ++i) {
        Mat a(12, 12);
        rng.fill_normal(a.data);
        mats.push_back(std::move(a));
    }
    auto sweep = [&] {
        std::vector<double> res(mats.size());
        parallel_for(mats.size(), [&](std::size_t i) {
            Mat ap = linalg::pinv(mats[i]);
            res[i] = linalg::frobenius(ap);
        });
        double acc = 0.0;
        for (double r : res)
            acc += r;
        return acc;
    };
    set_threads(1);
    double a1 = 0.0, a2 = 0.0;
    const double ts = time_ms([&] { a1 = sweep(); }, 3);
    set_threads(max_threads() > 1 ? max_threads() : 2);
    const double tp = time_ms([&] { a2 = sweep(); }, 3);
    std::printf("%-28s %10zu %12.3f %12.3f %8.2fx %6s\n", "pinv sweep (12x12 x64)", mats.size(),
                ts, tp, ts / tp, a1 == a2 ? "yes" : "NO");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled, serial build\n\n");
#endif
    bench_matmul();
    bench_batch_loss();
    bench_pinv_sweep();
    return 0;
}
