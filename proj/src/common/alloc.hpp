// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace mtr {

/// Keeps freed activation buffers in the process heap instead of returning
/// them to the OS after every forward pass. Call once from main(); a no-op
/// outside glibc.
void tune_allocator();

}  // namespace mtr
