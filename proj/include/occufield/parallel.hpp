// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace occufield {

// Worker cap: OCCUFIELD_THREADS env var, else hardware concurrency.
inline int max_threads() {
  static const int cached = [] {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("OCCUFIELD_THREADS")) {
      int cap = std::atoi(env);
      if (cap > 0 && cap < n) n = cap;
    }
    return n;
  }();
  return cached;
}

// Static partition of [0,n) into contiguous per-thread ranges. Every index is
// owned by exactly one worker and inner loops run in ascending order, so
// results are bit-identical regardless of the worker count.
template <typename Body>
void parallel_for(int64_t n, Body&& body, int64_t grain = 2048) {
  if (n <= 0) return;
  int threads = max_threads();
  if (threads <= 1 || n < grain) {
    body(int64_t{0}, n);
    return;
  }
  int64_t chunks = std::min<int64_t>(threads, (n + grain - 1) / grain);
  int64_t step = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(chunks) - 1);
  for (int64_t c = 1; c < chunks; ++c) {
    int64_t b = c * step, e = std::min(n, b + step);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  body(int64_t{0}, std::min(n, step));
  for (auto& t : pool) t.join();
}

}  // namespace occufield
