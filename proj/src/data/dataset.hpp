// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tensor/tensor.hpp"

namespace mtr::data {

/// Toy analogs of segmentation, depth, edge, keypoint and reconstruction.
inline constexpr std::array<std::string_view, 5> kToyTasks = {"seg", "depth", "edge", "keypoint", "recon"};

bool is_toy_task(std::string_view name);

struct SceneParams {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 4;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  /// false draws each target from its own geometry, so tasks are unrelated.
  bool correlated = true;
  double noise = 0.02;

  void validate() const;
};

/// Task name -> per-pixel target, [N, H, W]. Segmentation targets hold class
/// indices stored as doubles.
using TargetMap = std::map<std::string, Tensor, std::less<>>;

struct Batch {
  Tensor images;  // [N, 1, H, W]
  TargetMap targets;
};

struct Dataset {
  SceneParams params;
  Tensor images;
  TargetMap targets;
  /// Per-sample scene seeds; empty for datasets read from disk.
  std::vector<std::uint64_t> scene_seeds;

  std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  Batch batch(std::span<const std::size_t> indices) const;
  Batch example(std::size_t index) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::string> task_names() const;

  /// Same dimensions, images and targets (scene seeds are ignored).
  bool same_content(const Dataset& other) const;
};

/// Slices sample rows [N, ...] of `t` into a new tensor.
Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows);

}  // namespace mtr::data
