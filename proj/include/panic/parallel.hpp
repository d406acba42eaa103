//
// Deterministic sample-level parallelism. Work is split into contiguous
// chunks by index, so any per-slot results can be reduced in a fixed order
// regardless of thread scheduling. PANIC_NUM_THREADS caps the pool.
//

#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace panic {

inline int worker_count() {
    static const int cached = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("PANIC_NUM_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) hw = std::min(hw, v);
        }
        return hw;
    }();
    return cached;
}

// f(index, slot) is invoked for every index in [0, n); `slot` identifies the
// worker so callers can keep per-slot accumulators. Slot s handles the
// contiguous index range [s*chunk, ...), independent of timing.
template <class F>
void parallel_for(long n, F&& f, int max_threads = 0) {
    if (n <= 0) return;
    int threads = worker_count();
    if (max_threads > 0) threads = std::min(threads, max_threads);
    threads = static_cast<int>(std::min<long>(threads, n));
    if (threads <= 1) {
        for (long i = 0; i < n; ++i) f(i, 0);
        return;
    }
    const long chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int s = 0; s < threads; ++s) {
        const long lo = s * chunk;
        const long hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, s, &f] {
            for (long i = lo; i < hi; ++i) f(i, s);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace panic
