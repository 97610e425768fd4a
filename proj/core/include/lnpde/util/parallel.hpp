#pragma once

#include <cstddef>
#include <functional>

namespace lnpde {

/// Worker cap: LNPDE_THREADS if set (>= 1), otherwise the hardware count.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = worker_count()).
/// Indices are assigned in contiguous blocks; the first exception thrown by
/// any worker is rethrown after all workers have joined.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace lnpde
