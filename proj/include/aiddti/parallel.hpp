#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace aid {

namespace detail {
inline std::size_t& thread_setting() {
  static std::size_t value = [] {
    if (const char* env = std::getenv("AIDDTI_THREADS")) {
      try {
        const long n = std::stol(env);
        if (n > 0) return static_cast<std::size_t>(n);
      } catch (...) {
      }
    }
    return std::size_t{1};
  }();
  return value;
}
}  // namespace detail

/// Worker count for per-voxel maps. Defaults to $AIDDTI_THREADS or 1.
inline std::size_t thread_count() { return detail::thread_setting(); }
inline void set_thread_count(std::size_t n) { detail::thread_setting() = std::max<std::size_t>(1, n); }

/// Runs fn(i) for i in [0, n) over contiguous chunks. fn must only write
/// state owned by index i, so the result does not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t end = std::min(n, (w + 1) * chunk);
        for (std::size_t i = w * chunk; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace aid
