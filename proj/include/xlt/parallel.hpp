#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace xlt {

// Deterministic chunked work scheduler. The item range is partitioned into
// fixed-size chunks (the chunk size is a constant, never a function of the
// worker count), workers grab whole chunks, and the caller combines per-chunk
// results in chunk-index order. Floating-point reductions therefore produce
// bit-identical results at any worker count.
constexpr size_t kParallelChunk = 16;

inline size_t chunk_count(size_t n) { return (n + kParallelChunk - 1) / kParallelChunk; }

// fn(chunk_index, begin, end) is invoked once per chunk, possibly concurrently.
inline void for_each_chunk(size_t n, int workers,
                           const std::function<void(size_t, size_t, size_t)>& fn) {
  const size_t chunks = chunk_count(n);
  if (chunks == 0) return;
  if (workers < 1) workers = 1;
  if (static_cast<size_t>(workers) > chunks) workers = static_cast<int>(chunks);
  if (workers == 1) {
    for (size_t c = 0; c < chunks; ++c) {
      const size_t lo = c * kParallelChunk;
      const size_t hi = std::min(n, lo + kParallelChunk);
      fn(c, lo, hi);
    }
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const size_t c = next.fetch_add(1);
        if (c >= chunks) return;
        const size_t lo = c * kParallelChunk;
        const size_t hi = std::min(n, lo + kParallelChunk);
        fn(c, lo, hi);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xlt
