#pragma once

// Deterministic task parallelism. Work is split into contiguous index blocks
// and every task writes only to its own output slots, so results are
// identical for any thread count; reductions over task outputs are done by
// the caller in fixed index order.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace glvm {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Run fn(i) for i in [0, count). fn must not touch state shared with other
/// indices except through distinct output slots.
template <typename Fn>
void parallel_for(std::ptrdiff_t count, int threads, Fn&& fn) {
    threads = std::min<std::ptrdiff_t>(resolve_threads(threads), count);
    if (count <= 0) return;
    if (threads <= 1) {
        for (std::ptrdiff_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    std::ptrdiff_t chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        std::ptrdiff_t lo = t * chunk;
        std::ptrdiff_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi]() {
            try {
                for (std::ptrdiff_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> guard(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace glvm
