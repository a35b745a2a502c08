#pragma once

#include <cstdint>
#include <functional>

namespace roie {

// Worker count used by parallel_for. 1 runs everything inline on the caller.
// Initialized from ROIE_NET_THREADS when set, otherwise 1.
int thread_count();
void set_thread_count(int threads);

// Runs fn(i) for i in [begin, end). Work is split into contiguous chunks,
// one per worker; every index is handled by exactly one worker, so callers
// that write disjoint outputs per index get identical results for any
// thread count.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t)>& fn);

}  // namespace roie
