#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mrsae {

/// Runs body(begin, end) over a static partition of [0, n). Every index is owned by
/// exactly one call, so results never depend on the thread count as long as `body`
/// writes only to its own range.
template <typename Body>
void parallel_for_blocks(std::size_t n, std::size_t threads, Body&& body) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        body(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end)
            break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& th : pool)
        th.join();
}

} // namespace mrsae
