#pragma once

namespace cpql {

/// Keeps large matrix buffers on the heap instead of fresh mmap pages per
/// allocation. Call once at program start; no-op off glibc.
void tune_allocator();

}  // namespace cpql
