#pragma once

#include <functional>
#include <string>
#include <vector>

#include "modepeel/types.hpp"

namespace modepeel::util {

// Runs chunk_fn(begin, end) over a partition of [0, n); with threads <= 1 the
// call is inline.  Chunks are contiguous and results must be written to
// disjoint slots, which keeps every output bit independent of the thread
// count.
void parallel_for(int n, int threads,
                  const std::function<void(int, int)>& chunk_fn);

// Exact O(n^3) minimum-cost assignment (Hungarian with potentials) on a
// square cost matrix; returns the column assigned to each row.
std::vector<int> min_cost_assignment(const RMat& cost);

// Shortest-round-trip decimal formatting (17 significant digits).
std::string fmt_g17(double v);

}  // namespace modepeel::util
