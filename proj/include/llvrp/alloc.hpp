#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace llvrp {

// Training allocates and frees large tape buffers every batch. Keeping them in
// the heap instead of mmap/munmap round trips cuts system time substantially.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace llvrp
