#pragma once

#include <cstddef>
#include <functional>

namespace nbode {

/// Runs fn(index) for index in [0, count) across up to n_threads workers.
/// Callers must write results into preallocated per-index slots; chunking is
/// contiguous and results do not depend on the thread count.
void parallel_for(std::size_t count, std::size_t n_threads,
                  const std::function<void(std::size_t)>& fn);

std::size_t default_thread_count();

}  // namespace nbode
