// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mtr {

using Rng = std::mt19937_64;

/// Stable 64-bit mix (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

/// Child seeds for independent streams. Stable across runs and platforms, so a
/// stream keyed by a task name does not shift when other tasks are added.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace mtr
