#pragma once

#include <cstddef>
#include <functional>

namespace trime {

/// Worker threads used by parallel_for. 0 means "one per hardware thread".
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Calls fn(i) for i in [0, n) across the worker threads. Each index runs
/// exactly once; callers write results into per-index slots so that the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace trime
