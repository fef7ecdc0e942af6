// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "common/rng.hpp"
#include "data/dataset.hpp"

namespace mtr::data {

enum class ShapeKind { kRectangle, kEllipse };

struct SceneShape {
  ShapeKind kind = ShapeKind::kRectangle;
  double center_y = 0.0;
  double center_x = 0.0;
  double half_height = 1.0;
  double half_width = 1.0;
  std::size_t cls = 1;  // 1..K-1; 0 is background
  double depth = 1.0;   // smaller is nearer; nearer shapes occlude farther ones
};

struct SceneLayout {
  std::vector<SceneShape> shapes;
  double background_level = 0.2;
};

SceneLayout random_layout(const SceneParams& params, Rng& rng);

/// One scene with all five targets, each [H, W].
struct ToyScene {
  Tensor image;
  Tensor seg;
  Tensor depth;
  Tensor edge;
  Tensor keypoint;
  Tensor recon;
};

/// Renders the image and every target from one layout. `noise_rng` drives the
/// pixel noise only.
ToyScene render_scene(const SceneLayout& layout, const SceneParams& params, Rng& noise_rng);

/// A scene from its seed. With params.correlated == false the depth, edge and
/// keypoint targets come from independently drawn layouts.
ToyScene make_scene(const SceneParams& params, std::uint64_t scene_seed);

/// `n` scenes whose seeds are derived from (seed, split); different split
/// names give disjoint scene streams.
Dataset generate_dataset(std::size_t n, std::uint64_t seed, const SceneParams& params,
                         std::string_view split = "train");

}  // namespace mtr::data
