#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace melstyle {

inline int worker_count() {
    static int n = [] {
        if (const char* env = std::getenv("MELSTYLE_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw > 0 ? int(hw) : 1;
    }();
    return n;
}

// Static index partition; every index is processed by exactly one worker,
// so writes to disjoint slices stay deterministic regardless of thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace melstyle
