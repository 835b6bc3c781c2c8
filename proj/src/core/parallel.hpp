#pragma once

#include <functional>

namespace avloc {

// Chunked parallel loop over [0, n). The index range is split into fixed
// contiguous chunks, one per worker, so reductions that sum per-chunk partial
// results in chunk order stay bitwise deterministic for a given thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// threads <= 0 selects the hardware default (clamped to 8).
int resolve_threads(int threads);

}  // namespace avloc
