#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace disco {

// Worker count: DISCO_THREADS env var if set (>=1), else hardware concurrency.
int thread_budget();

// Partitions [0, n) into fixed chunks of `chunk` items (last one short) and
// runs fn(begin, end, chunk_index). The partition depends only on (n, chunk),
// never on the worker count, so per-chunk results combined in chunk order
// give bitwise-identical reductions for any DISCO_THREADS value.
void parallel_chunks(std::int64_t n, std::int64_t chunk,
                     const std::function<void(std::int64_t, std::int64_t, int)>& fn);

inline int num_chunks(std::int64_t n, std::int64_t chunk) {
  return n <= 0 ? 0 : static_cast<int>((n + chunk - 1) / chunk);
}

// Ordered reduction: per-chunk accumulators are merged left-to-right in chunk
// index order after all chunks finish.
template <class Acc, class PerChunk, class Merge>
Acc parallel_reduce_ordered(std::int64_t n, std::int64_t chunk, Acc init,
                            const PerChunk& per_chunk, const Merge& merge) {
  const int k = num_chunks(n, chunk);
  std::vector<Acc> parts(k, init);
  parallel_chunks(n, chunk, [&](std::int64_t b, std::int64_t e, int ci) {
    per_chunk(b, e, parts[ci]);
  });
  Acc total = std::move(init);
  for (int i = 0; i < k; ++i) merge(total, std::move(parts[i]));
  return total;
}

}  // namespace disco
