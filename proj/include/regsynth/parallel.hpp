// Minimal fork-join helpers. Work is split into contiguous index ranges so
// that any per-range accumulation can be reduced in a fixed order.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace regsynth {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : int(n);
}

// Runs fn(begin, end) over a partition of [0, count) on up to n_threads
// threads. fn must not throw.
inline void parallel_for_ranges(std::size_t count, int n_threads,
                                const std::function<void(std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  n_threads = int(std::min<std::size_t>(std::size_t(std::max(1, n_threads)), count));
  if (n_threads <= 1) {
    fn(0, count);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(n_threads));
  const std::size_t chunk = (count + std::size_t(n_threads) - 1) / std::size_t(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    const std::size_t lo = std::size_t(t) * chunk;
    if (lo >= count) break;
    const std::size_t hi = std::min(count, lo + chunk);
    pool.emplace_back(fn, lo, hi);
  }
  for (auto& th : pool) th.join();
}

// Runs fn(i) for i in [0, count) with an index-based partition.
inline void parallel_for(std::size_t count, int n_threads,
                         const std::function<void(std::size_t)>& fn) {
  parallel_for_ranges(count, n_threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) fn(i);
  });
}

} // namespace regsynth
