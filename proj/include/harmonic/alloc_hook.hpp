#pragma once

// Replaces the global allocation functions to feed alloc_stats.hpp.
// Include from exactly one translation unit of an executable.

#include <harmonic/alloc_stats.hpp>

#include <cstdlib>
#include <new>

namespace harmonic::alloc::detail {

// Each block carries its size in a header of one max-aligned slot.
inline constexpr std::size_t kHeader = alignof(std::max_align_t);

inline void* allocate(std::size_t n) {
  void* raw = std::malloc(n + kHeader);
  if (!raw) throw std::bad_alloc();
  *static_cast<std::size_t*>(raw) = n;
  note_alloc(n);
  return static_cast<char*>(raw) + kHeader;
}

inline void release(void* p) noexcept {
  if (!p) return;
  void* raw = static_cast<char*>(p) - kHeader;
  note_free(*static_cast<std::size_t*>(raw));
  std::free(raw);
}

inline void* allocate_aligned(std::size_t n, std::size_t align) {
  const std::size_t header = align > kHeader ? align : kHeader;
  void* raw = std::aligned_alloc(header, (n + header + header - 1) / header * header);
  if (!raw) throw std::bad_alloc();
  char* user = static_cast<char*>(raw) + header;
  reinterpret_cast<std::size_t*>(user)[-1] = n;
  reinterpret_cast<std::size_t*>(user)[-2] = header;
  note_alloc(n);
  return user;
}

inline void release_aligned(void* p) noexcept {
  if (!p) return;
  const std::size_t n = static_cast<std::size_t*>(p)[-1], header = static_cast<std::size_t*>(p)[-2];
  note_free(n);
  std::free(static_cast<char*>(p) - header);
}

inline const bool registered = (hooked = true);

}  // namespace harmonic::alloc::detail

void* operator new(std::size_t n) { return harmonic::alloc::detail::allocate(n); }
void* operator new[](std::size_t n) { return harmonic::alloc::detail::allocate(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  try {
    return harmonic::alloc::detail::allocate(n);
  } catch (...) {
    return nullptr;
  }
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept {
  try {
    return harmonic::alloc::detail::allocate(n);
  } catch (...) {
    return nullptr;
  }
}
void operator delete(void* p) noexcept { harmonic::alloc::detail::release(p); }
void operator delete[](void* p) noexcept { harmonic::alloc::detail::release(p); }
void operator delete(void* p, std::size_t) noexcept { harmonic::alloc::detail::release(p); }
void operator delete[](void* p, std::size_t) noexcept { harmonic::alloc::detail::release(p); }
void* operator new(std::size_t n, std::align_val_t a) {
  return harmonic::alloc::detail::allocate_aligned(n, static_cast<std::size_t>(a));
}
void* operator new[](std::size_t n, std::align_val_t a) {
  return harmonic::alloc::detail::allocate_aligned(n, static_cast<std::size_t>(a));
}
void operator delete(void* p, std::align_val_t) noexcept { harmonic::alloc::detail::release_aligned(p); }
void operator delete[](void* p, std::align_val_t) noexcept { harmonic::alloc::detail::release_aligned(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { harmonic::alloc::detail::release_aligned(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { harmonic::alloc::detail::release_aligned(p); }
