#pragma once

#include <cstddef>
#include <functional>

namespace metasysid {

/// Worker count: METASYSID_THREADS when set to a positive integer, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
/// write results by index so the outcome never depends on scheduling.
/// The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace metasysid
