#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace invnets {

inline constexpr const char* kVersion = "0.1.0";

/// Default absolute comparison tolerance used across the library.
inline constexpr double kDefaultTol = 1e-9;

/// Contract violation on an operation's inputs (preconditions, invariant breaks).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Number of worker threads for cell-parallel experiments.
/// INVNETS_THREADS caps it; unset or 0 means hardware concurrency.
inline int thread_budget() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("INVNETS_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0 && v < static_cast<long>(hw)) return static_cast<int>(v);
    if (v > 0) return static_cast<int>(v);
  }
  return static_cast<int>(hw);
}

/// Runs fn(i) for i in [0, count) on up to thread_budget() workers.
/// Cells must be independent; results are written by index so the
/// outcome does not depend on scheduling.
inline void parallel_cells(std::size_t count, const std::function<void(std::size_t)>& fn) {
  int workers = thread_budget();
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  int n = std::min<std::size_t>(workers, count);
  pool.reserve(n);
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace invnets
