#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nift {

inline std::atomic<unsigned>& thread_count_setting() {
  static std::atomic<unsigned> n{0};
  return n;
}

// 0 selects the available hardware parallelism.
inline void set_thread_count(unsigned n) { thread_count_setting() = n; }

inline unsigned thread_count() {
  unsigned n = thread_count_setting();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; callers
// write results by index so output never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned threads = 0) {
  if (threads == 0) threads = thread_count();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const std::size_t grain = std::max<std::size_t>(1, n / (8 * threads));
  auto worker = [&] {
    try {
      for (;;) {
        std::size_t begin = next.fetch_add(grain);
        if (begin >= n) break;
        std::size_t end = std::min(n, begin + grain);
        for (std::size_t i = begin; i < end; ++i) fn(i);
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      next = n;
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace nift
