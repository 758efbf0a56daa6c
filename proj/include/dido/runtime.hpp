#pragma once

namespace dido {

/// Keeps freed batch buffers in the heap instead of returning them to the
/// system after every network evaluation (glibc only; no-op elsewhere).
void tune_allocator();

}  // namespace dido
