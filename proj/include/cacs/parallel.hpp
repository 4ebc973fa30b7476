#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace cacs {

/// Runs fn(i) for i in [0, n). With threads > 1 the index space is split into
/// contiguous blocks, one per worker. Callers must write results into
/// per-index slots so the outcome is identical for any thread count; any
/// reduction happens afterwards in index order.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const size_t chunk = (n + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
        const size_t lo = w * chunk;
        const size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace cacs
