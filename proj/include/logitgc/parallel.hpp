#pragma once

#include <cstddef>
#include <stdexcept>
#include <thread>
#include <vector>

namespace logitgc {

// Process-wide worker count for the embarrassingly parallel scoring loops.
// Results are written to preallocated slots by index, so the outputs are
// identical for any thread count.
inline std::size_t& worker_threads() {
    static std::size_t count = 1;
    return count;
}

inline void set_worker_threads(std::size_t count) {
    if (count == 0) throw std::invalid_argument("set_worker_threads: count must be >= 1");
    worker_threads() = count;
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t threads = std::min(worker_threads(), n > 0 ? n : 1);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace logitgc
