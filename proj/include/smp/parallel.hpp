#pragma once

// Path-parallel execution with thread-count-invariant results.
//
// Work is split into contiguous index ranges; callers write per-index results
// into pre-sized storage and reduce afterwards in index order, so the thread
// count never changes a numeric output.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

namespace smp {

namespace detail {
inline std::atomic<unsigned>& default_threads_slot() {
    static std::atomic<unsigned> n{1};
    return n;
}
}  // namespace detail

inline void set_default_threads(unsigned n) { detail::default_threads_slot() = std::max(1u, n); }
inline unsigned default_threads() { return detail::default_threads_slot().load(); }

/// Calls fn(i) for every i in [0, n) using up to `threads` worker threads.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned threads = default_threads()) {
    threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> workers;
        workers.reserve(threads);
        const std::size_t chunk = (n + threads - 1) / threads;
        for (unsigned w = 0; w < threads; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            if (begin >= end) break;
            workers.emplace_back([&, begin, end] {
                try {
                    for (std::size_t i = begin; i < end; ++i) fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        }
    }
    if (first_error) std::rethrow_exception(first_error);
}

/// Engine for one Monte Carlo path; depends only on (seed, path index).
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t path, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace smp
