#pragma once

#include <cstddef>
#include <functional>

namespace vegas {

/// Worker cap: VEGASLAB_THREADS if set and positive, else hardware parallelism.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
/// write results into per-index slots and reduce afterwards in index order,
/// so outputs never depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace vegas
