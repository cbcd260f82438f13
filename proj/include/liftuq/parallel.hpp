#pragma once

#include <cstddef>
#include <functional>

namespace liftuq {

/// Worker count: LIFTUQ_WORKERS if set to a positive integer, else the
/// machine's hardware concurrency (at least 1).
int worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads (serially
/// when called from inside another parallel_for).
/// Callers write results into per-index slots and reduce afterwards in index
/// order, so outputs never depend on the number of workers. The first
/// exception thrown by any body is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace liftuq
