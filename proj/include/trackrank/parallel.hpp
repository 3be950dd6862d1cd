#pragma once

#include <cstdint>
#include <functional>

namespace trackrank {

/// Worker count for pure evaluation work: TRACKRANK_THREADS when set
/// (values < 1 clamp to 1), hardware concurrency otherwise.
int eval_threads();

/// Invokes fn(i) for every i in [0, n), splitting contiguous chunks across
/// eval_threads() threads. fn must not touch shared mutable state except via
/// disjoint per-i slots; results are identical for any thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace trackrank
