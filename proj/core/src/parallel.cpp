#include "disco/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace disco {

int thread_budget() {
  if (const char* env = std::getenv("DISCO_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_chunks(std::int64_t n, std::int64_t chunk,
                     const std::function<void(std::int64_t, std::int64_t, int)>& fn) {
  if (n <= 0) return;
  if (chunk <= 0) chunk = 1;
  const int k = num_chunks(n, chunk);
  const int workers = std::min<int>(thread_budget(), k);

  auto run_chunk = [&](int ci) {
    const std::int64_t b = static_cast<std::int64_t>(ci) * chunk;
    const std::int64_t e = std::min<std::int64_t>(b + chunk, n);
    fn(b, e, ci);
  };

  if (workers <= 1) {
    for (int ci = 0; ci < k; ++ci) run_chunk(ci);
    return;
  }

  std::atomic<int> next{0};
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  auto body = [&] {
    for (;;) {
      const int ci = next.fetch_add(1);
      if (ci >= k || failed.load()) return;
      try {
        run_chunk(ci);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 1; i < workers; ++i) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (failed.load() && err) std::rethrow_exception(err);
}

}  // namespace disco
