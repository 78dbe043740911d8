#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace graphfed {

// Runs fn(begin, end) over contiguous chunks of [0, total) on up to `workers`
// threads. Chunk boundaries depend only on (total, workers); callers that
// write to disjoint output slots stay bit-reproducible for any worker count.
template <typename Fn>
void parallel_for(std::size_t total, unsigned workers, Fn&& fn) {
    if (total == 0) return;
    if (workers <= 1 || total == 1) {
        fn(std::size_t(0), total);
        return;
    }
    const std::size_t n_threads = std::min<std::size_t>(workers, total);
    const std::size_t base = total / n_threads;
    const std::size_t rem = total % n_threads;
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    std::size_t begin = 0;
    for (std::size_t i = 0; i < n_threads; ++i) {
        const std::size_t len = base + (i < rem ? 1 : 0);
        const std::size_t end = begin + len;
        threads.emplace_back([&fn, &errors, i, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
        begin = end;
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace graphfed
