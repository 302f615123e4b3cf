#pragma once

#include <cstdint>
#include <functional>

namespace hlq {

// Worker count used by parallel loops: HLQ_THREADS when set to a positive
// integer, otherwise std::thread::hardware_concurrency().
int worker_count();

// Runs fn(i) for every i in [0, count). Items must write disjoint state; each
// item executes exactly once with a fixed internal reduction order, so results
// never depend on the worker count. Exceptions from items are rethrown on the
// calling thread (first one wins).
void parallel_for(int64_t count, const std::function<void(int64_t)>& fn);

}  // namespace hlq
