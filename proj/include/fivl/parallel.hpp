#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fivl {

// Runs fn(i) for i in [0, n) on up to `parallelism` threads (the caller's
// included). The first exception stops the remaining work and is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int parallelism, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    try {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    } catch (...) {
      std::lock_guard lock(mu);
      if (!failure) failure = std::current_exception();
      next = n;
    }
  };
  const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(n)));
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace fivl
