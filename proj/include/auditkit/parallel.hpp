#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace audit {

// Runs fn(i) for every i in [0, n) across at most max_workers threads,
// each worker taking one contiguous chunk. Callers keep determinism by
// writing into slot i only; chunk boundaries and completion order never
// reach the output. The first exception thrown by any worker is rethrown
// here.
template <typename Fn>
void parallel_for(std::int64_t n, std::int64_t max_workers, Fn&& fn) {
    if (n <= 0) return;
    const std::int64_t workers = std::min<std::int64_t>(n, std::max<std::int64_t>(1, max_workers));
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (std::int64_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            const std::int64_t lo = w * chunk;
            const std::int64_t hi = std::min(n, lo + chunk);
            try {
                for (std::int64_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Same contract with the worker count taken from the hardware.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const unsigned hw = std::thread::hardware_concurrency();
    parallel_for(n, hw == 0 ? 1 : static_cast<std::int64_t>(hw), std::forward<Fn>(fn));
}

}  // namespace audit
