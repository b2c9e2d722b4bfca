#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "ulab/common.hpp"

namespace ulab {

/// Worker count for fan-out sections: the ULAB_THREADS environment variable,
/// clamped to [1, hardware]. Unset means 1 — single-threaded, bitwise
/// reproducible mode — so parallelism is always opt-in.
inline int thread_count() {
  const char* env = std::getenv("ULAB_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  int n = std::atoi(env);
  if (n < 1) return 1;
  unsigned hw = std::thread::hardware_concurrency();
  if (hw > 0 && n > static_cast<int>(hw)) n = static_cast<int>(hw);
  return n;
}

/// Static contiguous partition of [0, n) over `workers` threads. fn(i) must be
/// pure with respect to shared state or write only to index-i slots; results
/// assembled by index are then identical for any worker count.
template <class Fn>
void parallel_for(idx n, int workers, Fn&& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (idx i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > static_cast<int>(n)) workers = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const idx chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const idx lo = w * chunk;
    const idx hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (idx i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ulab
