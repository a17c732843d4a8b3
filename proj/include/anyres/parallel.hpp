#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace anyres {

namespace detail {
inline std::atomic<int>& thread_count_slot() {
  static std::atomic<int> n{0};
  return n;
}
}  // namespace detail

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// 0 restores the default (all hardware threads, capped at 8).
inline void set_num_threads(int n) { detail::thread_count_slot().store(n); }

inline int num_threads() {
  const int n = detail::thread_count_slot().load();
  if (n > 0) return n;
  return std::min(hardware_threads(), 8);
}

// Splits [begin, end) into contiguous chunks, one per worker. Workers write
// disjoint outputs and each chunk runs its iterations in index order, so the
// result is bit-identical for any thread count.
inline void parallel_for(std::size_t begin, std::size_t end,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t n = end > begin ? end - begin : 0;
  if (n == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
  if (workers <= 1) {
    body(begin, end);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    if (lo >= end) break;
    const std::size_t hi = std::min(end, lo + chunk);
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

}  // namespace anyres
