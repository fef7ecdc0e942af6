// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "data/dataset.hpp"

namespace mtr::data {

inline constexpr char kDatasetMagic[4] = {'M', 'T', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

// Layout (little-endian):
//   "MTDS" | u32 version | u32 n | u32 H | u32 W | u32 K
//   u32 task_count | task_count x (u32 len, name bytes)
//   per sample: H*W f32 image, then per listed task either H*W u16 class
//   indices (seg) or H*W f32 values.
// "recon" is never stored; it is the image and is restored on read.

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace mtr::data
