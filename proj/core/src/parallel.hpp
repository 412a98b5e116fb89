#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace mrl {

// Worker cap: MRL_THREADS when set, hardware concurrency otherwise.
inline int worker_count() {
    if (const char* env = std::getenv("MRL_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace detail {
inline thread_local bool inside_parallel = false;
}

// Runs fn(i) for i in [0, n).  Callers keep determinism by writing results
// into per-index slots and reducing in index order afterwards; scheduling
// order is unspecified.  Nested calls run serially so replicate-level and
// subject-level loops do not oversubscribe.  The first worker exception is
// rethrown.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
    const int workers = detail::inside_parallel ? 1 : std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            detail::inside_parallel = true;
            try {
                for (int i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace mrl
