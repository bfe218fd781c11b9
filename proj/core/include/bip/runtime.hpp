#pragma once

#include <cstddef>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bip {

/// Keep freed memory in the heap rather than returning it to the OS. Forward
/// and backward passes reallocate the same large buffers every step, and
/// glibc's defaults turn each of those into fresh page faults. Call once from
/// main(); it is process-wide.
inline void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace bip
