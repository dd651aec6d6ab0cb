#pragma once

namespace healnet {

/// Keeps freed activation buffers in the heap instead of returning them to
/// the OS after every step (glibc only; no-op elsewhere). Call once at start.
void tune_allocator();

}  // namespace healnet
