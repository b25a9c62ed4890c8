#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace isorec {

// Thread cap: hardware concurrency, optionally reduced by ISOREC_THREADS.
inline int max_threads() {
    int hw = int(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("ISOREC_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1 && cap < hw) hw = cap;
    }
    return hw;
}

// Static contiguous partition of [0, n); each index is processed by exactly
// one thread, so results are bitwise independent of scheduling.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int nt = std::min(max_threads(), n);
    if (nt <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(std::size_t(nt));
    for (int k = 0; k < nt; ++k) {
        const int lo = int(std::int64_t(n) * k / nt);
        const int hi = int(std::int64_t(n) * (k + 1) / nt);
        workers.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace isorec
