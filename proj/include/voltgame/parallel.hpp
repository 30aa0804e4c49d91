#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace voltgame {

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a static index
/// partition. The partition depends only on (n, threads), and each worker
/// writes only to the slots of its own indices, so results are bit-identical
/// for every thread count as long as fn(i) reads shared state and writes
/// per-index outputs.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int workers = std::max(1, std::min(threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace voltgame
