#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace nerfcast {

// Worker count: hardware concurrency, optionally capped by NERFCAST_THREADS.
inline int worker_count() {
  int n = int(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("NERFCAST_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

// Dynamic work stealing over [0, n); use only for order-independent work.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next(0);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : threads) t.join();
}

// Static round-robin: worker w handles items w, w+W, w+2W, ... so per-worker
// accumulation order is fixed and results reduce deterministically in worker
// order for a given worker count.
inline void parallel_workers(int n_items, const std::function<void(int item, int worker)>& fn,
                             int workers = 0) {
  if (workers <= 0) workers = worker_count();
  workers = std::min(workers, std::max(n_items, 1));
  if (workers == 1) {
    for (int i = 0; i < n_items; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      for (int i = w; i < n_items; i += workers) fn(i, w);
    });
  for (auto& t : threads) t.join();
}

}  // namespace nerfcast
