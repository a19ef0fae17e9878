#pragma once

#include <cstddef>
#include <functional>

namespace gtimm {

// Worker count: GTIMM_THREADS when set to a positive integer (at most 256),
// otherwise the hardware concurrency; at least 1.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Each index is executed exactly once; callers
// write results into per-index slots so the outcome does not depend on the
// number of threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gtimm
