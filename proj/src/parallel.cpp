#include "hccr/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace hccr {

namespace {
std::atomic<int> g_threads{1};
}

int num_threads() { return g_threads.load(std::memory_order_relaxed); }

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

int threads_from_env(int fallback) {
  const char* value = std::getenv("MELNYK_THREADS");
  if (value == nullptr || *value == '\0') return fallback;
  try {
    std::size_t used = 0;
    const int n = std::stoi(value, &used);
    if (used != std::string(value).size() || n < 1) return fallback;
    return n;
  } catch (const std::exception&) {
    return fallback;
  }
}

}  // namespace hccr
