#pragma once

#include <cstddef>
#include <functional>

namespace despeckle {

// Worker count: DESPECKLE_THREADS when set to a positive integer, otherwise
// std::thread::hardware_concurrency().
std::size_t worker_count();

// Overrides the worker count for the current process (0 restores the default).
void set_worker_count(std::size_t n);

// Runs body(i) for i in [0, n). Iterations are distributed over contiguous
// blocks; callers must make each iteration write disjoint memory so results
// do not depend on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace despeckle
