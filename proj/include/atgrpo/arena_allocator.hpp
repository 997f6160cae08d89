// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <new>

namespace atgrpo {

namespace detail {
void* arena_allocate(std::size_t bytes);
void arena_deallocate(void* p, std::size_t bytes) noexcept;
}  // namespace detail

/// Unmaps the block kept for reuse, if any.
void release_arena_cache();

/// Allocator for large node arenas. On Linux, blocks of 2 MiB and more are
/// mapped directly, backed by transparent huge pages when available, and the
/// largest released block is kept for reuse by the next large allocation.
template <class T>
struct ArenaAllocator {
  using value_type = T;

  ArenaAllocator() = default;
  template <class U>
  ArenaAllocator(const ArenaAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(detail::arena_allocate(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { detail::arena_deallocate(p, n * sizeof(T)); }

  template <class U>
  bool operator==(const ArenaAllocator<U>&) const noexcept { return true; }
};

}  // namespace atgrpo
