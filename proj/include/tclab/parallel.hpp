#pragma once

#include "tclab/core.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace tclab {

/// Hardware concurrency, capped by TCLAB_THREADS when set to a positive integer.
inline int worker_count() {
    int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("TCLAB_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        detail::require<ConfigError>(end != env && *end == '\0' && cap >= 1, "TCLAB_THREADS='", env,
                                     "' is not a positive integer");
        n = std::min<int>(n, static_cast<int>(std::min<long>(cap, 1024)));
    }
    return n;
}

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// results by index, so output order never depends on scheduling. The first
/// exception thrown by any task is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace tclab
