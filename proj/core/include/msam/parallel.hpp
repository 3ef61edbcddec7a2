#pragma once

#include <cstddef>
#include <functional>

namespace msam {

// Worker count: MSAM_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t thread_budget();

// Calls fn(i) for every i in [0, n), splitting the range into contiguous
// chunks across up to thread_budget() threads. Callers must write results to
// disjoint, index-addressed slots so output does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace msam
