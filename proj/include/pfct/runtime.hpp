#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace pfct {

/// Keeps large activation buffers on the heap instead of fresh mmap pages.
/// Training allocates and frees the same sizes every step; page faults on
/// new mappings otherwise dominate small-batch step time.
inline void tune_allocator()
{
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace pfct
