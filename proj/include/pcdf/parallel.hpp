#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>

#include <omp.h>

namespace pcdf {

// Runs body(i) for i in [0, n) on up to `workers` OpenMP threads with dynamic
// scheduling. The first exception thrown by any iteration is rethrown after
// the loop; remaining iterations still run.
template <class Body>
void parallel_for(std::size_t n, int workers, Body&& body) {
  std::exception_ptr first;
  std::mutex mu;
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers < 1 ? 1 : workers)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

template <class Body>
void serial_for(std::size_t n, Body&& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace pcdf
