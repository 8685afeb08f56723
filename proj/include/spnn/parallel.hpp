#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spnn {

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Parallel loop over [0, n). Each index must write only to its own slots;
// results are then bit-identical for any thread count. An exception thrown
// by any index is captured and rethrown after the region joins (exceptions
// must not unwind out of an OpenMP worker).
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#ifdef _OPENMP
    std::exception_ptr error;
    std::atomic<bool> failed{false};
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        if (failed.load(std::memory_order_relaxed))
            continue;
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            if (!failed.exchange(true))
                error = std::current_exception();
        }
    }
    if (error)
        std::rethrow_exception(error);
#else
    for (std::size_t i = 0; i < n; ++i)
        fn(i);
#endif
}

// Chunked parallel reduction with a FIXED chunk grid. The chunk count does
// not depend on the runtime thread count, and each chunk accumulates its
// items in index order, so the final merge order (chunk 0, 1, ...) yields
// bit-identical results no matter how many threads execute it.
//
//   make()        -> Buf            fresh accumulator
//   fn(buf, i)                      fold item i into buf
//   merge(buf)                      called serially, in chunk order
template <class MakeBuf, class Fn, class Merge>
void chunked_reduce(std::size_t n, std::size_t chunk_count, MakeBuf make, Fn fn, Merge merge) {
    if (n == 0)
        return;
    if (chunk_count == 0)
        chunk_count = 1;
    if (chunk_count > n)
        chunk_count = n;
    using Buf = decltype(make());
    std::vector<Buf> bufs;
    bufs.reserve(chunk_count);
    for (std::size_t c = 0; c < chunk_count; ++c)
        bufs.push_back(make());
    const std::size_t base = n / chunk_count;
    const std::size_t extra = n % chunk_count;
    parallel_for(chunk_count, [&](std::size_t c) {
        std::size_t begin = c * base + std::min(c, extra);
        std::size_t end = begin + base + (c < extra ? 1 : 0);
        for (std::size_t i = begin; i < end; ++i)
            fn(bufs[c], i);
    });
    for (std::size_t c = 0; c < chunk_count; ++c)
        merge(bufs[c]);
}

// Default chunk grid used by batch kernels.
inline constexpr std::size_t kReduceChunks = 8;

}  // namespace spnn
