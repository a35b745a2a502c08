#include "roie/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "roie/error.hpp"

namespace roie {
namespace {

int initial_threads() {
  if (const char* env = std::getenv("ROIE_NET_THREADS")) {
    try {
      int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

std::atomic<int>& threads() {
  static std::atomic<int> t{initial_threads()};
  return t;
}

}  // namespace

int thread_count() { return threads().load(std::memory_order_relaxed); }

void set_thread_count(int n) {
  if (n < 1) throw ConfigError("thread count must be >= 1, got " + std::to_string(n));
  threads().store(n, std::memory_order_relaxed);
}

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t)>& fn) {
  const int64_t total = end - begin;
  if (total <= 0) return;
  const int64_t workers = std::min<int64_t>(thread_count(), total);
  if (workers <= 1) {
    for (int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const int64_t chunk = (total + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int64_t w = 1; w < workers; ++w) {
    const int64_t lo = begin + w * chunk;
    const int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (int64_t i = begin; i < std::min(end, begin + chunk); ++i) fn(i);
}

}  // namespace roie
