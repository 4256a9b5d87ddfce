#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace xfuse {

namespace detail {
inline std::atomic<unsigned>& thread_cap() {
    static std::atomic<unsigned> cap = [] {
        if (const char* env = std::getenv("XFUSE_THREADS")) {
            try {
                long v = std::stol(env);
                if (v >= 1) return static_cast<unsigned>(v);
            } catch (...) {
            }
        }
        return 1u;
    }();
    return cap;
}
}  // namespace detail

/// Worker cap for data-parallel kernels. Defaults to XFUSE_THREADS or 1.
inline unsigned max_threads() { return detail::thread_cap().load(); }
inline void set_max_threads(unsigned n) { detail::thread_cap().store(std::max(1u, n)); }

/// Runs fn(i) for i in [0, n). Every index writes disjoint outputs, so the
/// result does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(max_threads(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
}

}  // namespace xfuse
