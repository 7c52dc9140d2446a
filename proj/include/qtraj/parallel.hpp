// parallel.hpp — deterministic block-parallel execution.
//
// Work is split into fixed-size blocks whose boundaries depend only on the
// item count, never on the thread count. Callers that reduce must combine
// per-block results serially in block order, which makes floating-point
// output independent of QTRAJ_THREADS.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qtraj {

inline unsigned thread_count() {
    if (const char* env = std::getenv("QTRAJ_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

inline constexpr std::size_t kParallelBlock = 64;

// Invoke fn(block_index, begin, end) for every block [begin, end) of size
// kParallelBlock (last block may be short). Blocks are claimed dynamically
// but fn must only touch per-block state; ordering is the caller's job.
template <class Fn>
void parallel_for_blocks(std::size_t n_items, Fn&& fn) {
    if (n_items == 0) return;
    const std::size_t n_blocks = (n_items + kParallelBlock - 1) / kParallelBlock;
    const unsigned n_threads =
        static_cast<unsigned>(std::min<std::size_t>(thread_count(), n_blocks));
    if (n_threads <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b)
            fn(b, b * kParallelBlock, std::min(n_items, (b + 1) * kParallelBlock));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t b = next.fetch_add(1);
                if (b >= n_blocks) return;
                try {
                    fn(b, b * kParallelBlock, std::min(n_items, (b + 1) * kParallelBlock));
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace qtraj
