#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mfg {

inline int default_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Static block partition of [0, n). fn(i) must be safe to call concurrently
// for distinct i. Results must be written by index so reductions do not
// depend on scheduling.
inline void parallel_for(std::size_t n, int n_threads,
                         const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  int workers = std::max(1, n_threads);
  if (workers == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = static_cast<int>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    pool.emplace_back([&, lo, hi, w] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mfg
