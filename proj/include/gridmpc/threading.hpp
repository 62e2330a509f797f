#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace gridmpc {

/// Worker cap: GRIDMPC_THREADS when set, hardware concurrency otherwise.
inline int max_threads() {
  if (const char* env = std::getenv("GRIDMPC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

/// Runs fn(i) for i in [0, n) across up to max_threads() workers. Results
/// must be written to per-index slots by the caller; the iteration order is
/// unspecified but the index partition is deterministic.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(max_threads(), n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace gridmpc
