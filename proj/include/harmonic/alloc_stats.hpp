#pragma once

#include <atomic>
#include <cstddef>

namespace harmonic::alloc {

/// Live heap bytes and the high-water mark since the last reset. Only counts
/// when some translation unit of the program includes alloc_hook.hpp.
inline std::atomic<std::size_t> live{0};
inline std::atomic<std::size_t> peak{0};
inline std::atomic<bool> hooked{false};

inline void note_alloc(std::size_t n) {
  const std::size_t now = live.fetch_add(n, std::memory_order_relaxed) + n;
  std::size_t p = peak.load(std::memory_order_relaxed);
  while (now > p && !peak.compare_exchange_weak(p, now, std::memory_order_relaxed)) {
  }
}

inline void note_free(std::size_t n) { live.fetch_sub(n, std::memory_order_relaxed); }

inline void reset_peak() { peak.store(live.load()); }

/// Bytes above the level at the last reset_peak().
class PeakScope {
 public:
  PeakScope() : base_(live.load()) { reset_peak(); }
  std::size_t bytes() const {
    const std::size_t p = peak.load();
    return p > base_ ? p - base_ : 0;
  }

 private:
  std::size_t base_;
};

}  // namespace harmonic::alloc
