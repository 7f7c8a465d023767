#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace wino {

// Worker count: WINO_LAB_THREADS when set, otherwise the hardware concurrency.
inline std::size_t worker_threads() {
    if (const char * env = std::getenv("WINO_LAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) {
            return static_cast<std::size_t>(v);
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n). Work is split into contiguous ranges, so callers
// that write into slot i get results independent of the thread count.
template <typename Fn> void parallel_for(std::size_t n, Fn && fn, std::size_t threads = worker_threads()) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::exception_ptr       error;
    std::mutex               mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t begin = n * t / threads;
            const std::size_t end   = n * (t + 1) / threads;
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!error) {
                    error = std::current_exception();
                }
            }
        });
    }
    for (auto & th : pool) {
        th.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace wino
