#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace harmonic {

namespace detail {
inline std::atomic<unsigned>& thread_count() {
  static std::atomic<unsigned> n{1};
  return n;
}
}  // namespace detail

/// Worker count used by the conv/GEMM kernels. 1 (the default) runs inline.
inline void set_num_threads(unsigned n) { detail::thread_count() = std::max(1u, n); }
inline unsigned num_threads() { return detail::thread_count(); }

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; each item
/// is executed by exactly one thread so per-item reduction order is unchanged.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(num_threads(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(loop);
  loop();
}

}  // namespace harmonic
