#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace hccr {

// Process-wide worker count for the sample-parallel paths. Defaults to 1,
// which keeps every reduction in a fixed sequential order.
int num_threads();
void set_num_threads(int n);

// Reads MELNYK_THREADS; returns `fallback` when unset or invalid.
int threads_from_env(int fallback = 1);

// Splits [0, n) into at most num_threads() contiguous ranges and calls
// fn(begin, end, worker) for each. The partition depends only on n and the
// worker count, so per-worker partial results can be reduced in worker order
// deterministically. Exceptions from workers are rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, num_threads())));
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  auto run = [&](std::size_t w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    try {
      fn(begin, end, w);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::size_t worker_count(std::size_t n) {
  return std::max<std::size_t>(
      1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, num_threads()))));
}

}  // namespace hccr
