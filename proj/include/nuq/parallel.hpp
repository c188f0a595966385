#pragma once

#include <cstddef>
#include <functional>

namespace nuq {

// Process-wide worker count used by the voxel loops. 0 means "hardware
// concurrency". Outputs never depend on this value.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs body(i) for i in [0, n) over contiguous static chunks. Bodies must
// write only to disjoint locations. The first exception thrown by any body
// is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body);

} // namespace nuq
