#pragma once

// Process-level allocator tuning for the compute engine.
//
// Training and inference cycle through a handful of multi-hundred-megabyte
// activation tensors per step. With glibc's defaults those allocations are
// served by mmap and returned to the kernel on free, so every step pays the
// page-fault and zeroing cost again. Raising the mmap and trim thresholds
// keeps the freed chunks on the heap, where the next step reuses them warm.
// Placement of allocations has no effect on computed values.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ctseg {

inline void tune_allocator() {
#if defined(__GLIBC__)
  static bool done = false;
  if (done) return;
  done = true;
  ::mallopt(M_MMAP_THRESHOLD, 1 << 30);
  ::mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ctseg
