// SPDX-License-Identifier: Apache-2.0
#include "data/scene.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace mtr::data {

namespace {

constexpr double kTextureAmplitude = 0.08;
constexpr double kKeypointSigma = 1.5;
constexpr double kMinDepth = 0.5;
constexpr double kMaxShapeDepth = 2.5;

double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

bool covers(const SceneShape& s, double y, double x) {
  const double dy = (y - s.center_y) / s.half_height;
  const double dx = (x - s.center_x) / s.half_width;
  if (s.kind == ShapeKind::kRectangle) return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  return dy * dy + dx * dx <= 1.0;
}

// Index of the nearest covering shape per pixel, or -1 for background.
std::vector<int> owners(const SceneLayout& layout, std::size_t h, std::size_t w) {
  std::vector<int> owner(h * w, -1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double best = 0.0;
      for (std::size_t k = 0; k < layout.shapes.size(); ++k) {
        const SceneShape& s = layout.shapes[k];
        if (!covers(s, static_cast<double>(y), static_cast<double>(x))) continue;
        if (owner[y * w + x] < 0 || s.depth < best) {
          owner[y * w + x] = static_cast<int>(k);
          best = s.depth;
        }
      }
    }
  return owner;
}

// Zero-mean texture in {-1, +1} identifying a class: horizontal stripes,
// vertical stripes, checkerboard, then the same with a longer period.
double texture(std::size_t cls, std::size_t y, std::size_t x) {
  const std::size_t family = (cls - 1) % 3;
  const std::size_t period = 1 + (cls - 1) / 3;
  const std::size_t ty = y / period, tx = x / period;
  std::size_t bit = 0;
  if (family == 0) bit = ty % 2;
  if (family == 1) bit = tx % 2;
  if (family == 2) bit = (ty + tx) % 2;
  return bit ? 1.0 : -1.0;
}

}  // namespace

void SceneParams::validate() const {
  if (height < 8 || width < 8) throw InvalidArgument("scene height and width must be at least 8");
  if (num_classes < 2) throw InvalidArgument("scene needs at least 2 classes");
  if (min_shapes > max_shapes) throw InvalidArgument("min_shapes exceeds max_shapes");
  if (!(noise >= 0.0)) throw InvalidArgument("noise must be nonnegative");
}

SceneLayout random_layout(const SceneParams& params, Rng& rng) {
  params.validate();
  const double h = static_cast<double>(params.height);
  const double w = static_cast<double>(params.width);
  std::uniform_int_distribution<std::size_t> count(params.min_shapes, params.max_shapes);
  std::uniform_int_distribution<std::size_t> cls(1, params.num_classes - 1);
  std::uniform_int_distribution<int> kind(0, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneLayout layout;
  layout.background_level = 0.25 + 0.2 * unit(rng);
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    SceneShape s;
    s.kind = kind(rng) ? ShapeKind::kEllipse : ShapeKind::kRectangle;
    s.half_height = 2.5 + (h / 4.0 - 2.5) * unit(rng);
    s.half_width = 2.5 + (w / 4.0 - 2.5) * unit(rng);
    s.center_y = s.half_height + (h - 1.0 - 2.0 * s.half_height) * unit(rng);
    s.center_x = s.half_width + (w - 1.0 - 2.0 * s.half_width) * unit(rng);
    s.cls = cls(rng);
    s.depth = kMinDepth + (kMaxShapeDepth - kMinDepth) * unit(rng);
    layout.shapes.push_back(s);
  }
  return layout;
}

ToyScene render_scene(const SceneLayout& layout, const SceneParams& params, Rng& noise_rng) {
  params.validate();
  for (const SceneShape& s : layout.shapes) {
    if (s.cls < 1 || s.cls >= params.num_classes) throw InvalidArgument("scene shape class out of range");
  }
  const std::size_t h = params.height, w = params.width;
  const Shape plane{h, w};
  ToyScene scene{Tensor(plane), Tensor(plane), Tensor(plane), Tensor(plane), Tensor(plane), Tensor(plane)};
  const std::vector<int> owner = owners(layout, h, w);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const int k = owner[i];
      double level = layout.background_level;
      // Floor-like background: depth 3 at the top row to 4 at the bottom.
      double depth = 3.0 + static_cast<double>(y) / static_cast<double>(h - 1);
      double cls = 0.0;
      if (k >= 0) {
        const SceneShape& s = layout.shapes[static_cast<std::size_t>(k)];
        // Nearer shapes render brighter.
        level = layout.background_level + 0.28 - 0.08 * s.depth + kTextureAmplitude * texture(s.cls, y, x);
        depth = s.depth;
        cls = static_cast<double>(s.cls);
      }
      const double pixel = std::clamp(level + params.noise * noise(noise_rng), 0.0, 1.0);
      scene.image[i] = to_float32(pixel);
      scene.seg[i] = cls;
      scene.depth[i] = to_float32(std::clamp(depth, 0.0, 4.0));

      bool boundary = false;
      if (y > 0) boundary = boundary || owner[i - w] != k;
      if (y + 1 < h) boundary = boundary || owner[i + w] != k;
      if (x > 0) boundary = boundary || owner[i - 1] != k;
      if (x + 1 < w) boundary = boundary || owner[i + 1] != k;
      scene.edge[i] = boundary ? 1.0 : 0.0;

      double heat = 0.0;
      for (const SceneShape& s : layout.shapes) {
        const double dy = static_cast<double>(y) - s.center_y;
        const double dx = static_cast<double>(x) - s.center_x;
        heat = std::max(heat, std::exp(-(dy * dy + dx * dx) / (2.0 * kKeypointSigma * kKeypointSigma)));
      }
      scene.keypoint[i] = to_float32(heat);
    }
  scene.recon = scene.image;
  return scene;
}

ToyScene make_scene(const SceneParams& params, std::uint64_t scene_seed) {
  Rng rng(scene_seed);
  Rng noise_rng(derive_seed(scene_seed, "noise"));
  const SceneLayout primary = random_layout(params, rng);
  ToyScene scene = render_scene(primary, params, noise_rng);
  if (!params.correlated) {
    Rng quiet(0);
    const SceneParams noiseless = [&] {
      SceneParams p = params;
      p.noise = 0.0;
      return p;
    }();
    scene.depth = render_scene(random_layout(params, rng), noiseless, quiet).depth;
    scene.edge = render_scene(random_layout(params, rng), noiseless, quiet).edge;
    scene.keypoint = render_scene(random_layout(params, rng), noiseless, quiet).keypoint;
  }
  return scene;
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const SceneParams& params, std::string_view split) {
  if (n < 1) throw InvalidArgument("dataset size must be at least 1");
  params.validate();
  const std::size_t h = params.height, w = params.width, hw = h * w;
  Dataset ds;
  ds.params = params;
  ds.images = Tensor(Shape{n, 1, h, w});
  for (std::string_view t : kToyTasks) ds.targets.emplace(std::string(t), Tensor(Shape{n, h, w}));
  const std::uint64_t stream = derive_seed(seed, split);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t scene_seed = derive_seed(stream, static_cast<std::uint64_t>(i));
    ds.scene_seeds.push_back(scene_seed);
    const ToyScene s = make_scene(params, scene_seed);
    auto put = [&](Tensor& dst, const Tensor& src) {
      std::copy(src.data().begin(), src.data().end(), dst.data().begin() + static_cast<std::ptrdiff_t>(i * hw));
    };
    put(ds.images, s.image);
    put(ds.targets.at("seg"), s.seg);
    put(ds.targets.at("depth"), s.depth);
    put(ds.targets.at("edge"), s.edge);
    put(ds.targets.at("keypoint"), s.keypoint);
    put(ds.targets.at("recon"), s.recon);
  }
  return ds;
}

}  // namespace mtr::data
