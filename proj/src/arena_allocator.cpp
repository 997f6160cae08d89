// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/arena_allocator.hpp"

#include <mutex>
#include <utility>

#if defined(__linux__)
#include <sys/mman.h>
#endif

namespace atgrpo {
namespace {

#if defined(__linux__)
constexpr std::size_t kLargeBlock = std::size_t{2} << 20;

// One released block is kept mapped so the next tree reuses its resident pages.
struct BlockCache {
  std::mutex mutex;
  void* cached = nullptr;
  std::size_t cached_bytes = 0;
  void* lent = nullptr;  // cached block currently handed out, possibly larger than asked for
  std::size_t lent_bytes = 0;
};

BlockCache& cache() {
  static BlockCache c;
  return c;
}

void* map_block(std::size_t bytes) {
  void* p = mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  if (p == MAP_FAILED) throw std::bad_alloc();
  madvise(p, bytes, MADV_HUGEPAGE);
  return p;
}
#endif

}  // namespace

namespace detail {

void* arena_allocate(std::size_t bytes) {
#if defined(__linux__)
  if (bytes >= kLargeBlock) {
    BlockCache& c = cache();
    {
      std::lock_guard lock(c.mutex);
      if (c.cached && c.cached_bytes >= bytes && !c.lent) {
        c.lent = c.cached;
        c.lent_bytes = c.cached_bytes;
        c.cached = nullptr;
        c.cached_bytes = 0;
        return c.lent;
      }
    }
    return map_block(bytes);
  }
#endif
  return ::operator new(bytes);
}

void arena_deallocate(void* p, std::size_t bytes) noexcept {
#if defined(__linux__)
  if (bytes >= kLargeBlock) {
    BlockCache& c = cache();
    std::lock_guard lock(c.mutex);
    if (p == c.lent) {
      bytes = c.lent_bytes;
      c.lent = nullptr;
      c.lent_bytes = 0;
    }
    if (bytes > c.cached_bytes) std::swap(p, c.cached), std::swap(bytes, c.cached_bytes);
    if (p) munmap(p, bytes);
    return;
  }
#endif
  ::operator delete(p, bytes);
}

}  // namespace detail

void release_arena_cache() {
#if defined(__linux__)
  BlockCache& c = cache();
  std::lock_guard lock(c.mutex);
  if (c.cached) munmap(c.cached, c.cached_bytes);
  c.cached = nullptr;
  c.cached_bytes = 0;
#endif
}

}  // namespace atgrpo
