// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "common/error.hpp"
#include "data/dataset_io.hpp"
#include "data/sandbox.hpp"
#include "test_util.hpp"

namespace mtr {
namespace {

using testing::small_scene;
using testing::TempDir;

TEST(Scene, GenerationIsDeterministic) {
  const data::Dataset a = data::generate_dataset(6, 7, small_scene(16));
  const data::Dataset b = data::generate_dataset(6, 7, small_scene(16));
  EXPECT_TRUE(a.same_content(b));
  EXPECT_EQ(a.scene_seeds, b.scene_seeds);
  EXPECT_FALSE(a.same_content(data::generate_dataset(6, 8, small_scene(16))));
}

TEST(Scene, SplitsUseDisjointSceneSeeds) {
  const data::Dataset train = data::generate_dataset(50, 1, small_scene(), "train");
  const data::Dataset test = data::generate_dataset(50, 1, small_scene(), "test");
  const std::set<std::uint64_t> seen(train.scene_seeds.begin(), train.scene_seeds.end());
  for (std::uint64_t s : test.scene_seeds) EXPECT_FALSE(seen.count(s));
}

TEST(Scene, TargetsAreWellFormed) {
  const data::SceneParams p = small_scene(16);
  const data::Dataset ds = data::generate_dataset(20, 3, p);
  EXPECT_EQ(ds.images.shape(), (Shape{20, 1, 16, 16}));
  EXPECT_EQ(ds.targets.at("recon"), ds.images.reshaped({20, 16, 16}));
  for (double v : ds.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : ds.targets.at("seg").data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, static_cast<double>(p.num_classes));
    EXPECT_EQ(v, std::floor(v));
  }
  for (double v : ds.targets.at("depth").data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 4.0);
  }
  for (double v : ds.targets.at("edge").data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  for (double v : ds.targets.at("keypoint").data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Scene, OneRectangleGivesTwoClasses) {
  data::SceneParams p = small_scene(16);
  data::SceneLayout layout;
  data::SceneShape s;
  s.center_y = 7.0;
  s.center_x = 8.0;
  s.half_height = 3.0;
  s.half_width = 4.0;
  s.cls = 2;
  s.depth = 1.0;
  layout.shapes.push_back(s);
  Rng rng(0);
  const data::ToyScene scene = data::render_scene(layout, p, rng);
  std::set<double> classes(scene.seg.data().begin(), scene.seg.data().end());
  EXPECT_EQ(classes, (std::set<double>{0.0, 2.0}));
  EXPECT_EQ(scene.recon, scene.image);
  // Pixels inside the rectangle carry the shape's depth.
  EXPECT_EQ(scene.depth[7 * 16 + 8], 1.0);
  // The keypoint heatmap peaks at the shape centre.
  EXPECT_EQ(scene.keypoint[7 * 16 + 8], 1.0);
  EXPECT_EQ(scene.edge[7 * 16 + 8], 0.0);
  EXPECT_EQ(scene.edge[4 * 16 + 8], 1.0);

  layout.shapes[0].cls = 4;
  EXPECT_THROW(data::render_scene(layout, p, rng), InvalidArgument);
}

TEST(Scene, UncorrelatedModeDecouplesGeometry) {
  data::SceneParams p = small_scene(16);
  p.correlated = false;
  const data::Dataset ds = data::generate_dataset(30, 4, p);
  // Depth no longer tracks the segmentation foreground.
  std::size_t disagree = 0;
  const Tensor& seg = ds.targets.at("seg");
  const Tensor& depth = ds.targets.at("depth");
  for (std::size_t i = 0; i < seg.numel(); ++i) disagree += (seg[i] > 0.0) != (depth[i] < 3.0);
  EXPECT_GT(disagree, seg.numel() / 10);

  p.correlated = true;
  const data::Dataset dc = data::generate_dataset(30, 4, p);
  for (std::size_t i = 0; i < seg.numel(); ++i) {
    EXPECT_EQ(dc.targets.at("seg")[i] > 0.0, dc.targets.at("depth")[i] < 3.0);
  }
}

TEST(Scene, ParameterValidation) {
  data::SceneParams p = small_scene();
  p.height = 7;
  EXPECT_THROW(data::generate_dataset(1, 0, p), InvalidArgument);
  p = small_scene();
  p.num_classes = 1;
  EXPECT_THROW(data::generate_dataset(1, 0, p), InvalidArgument);
  EXPECT_THROW(data::generate_dataset(0, 0, small_scene()), InvalidArgument);
}

TEST(Dataset, BatchAndSubset) {
  const data::Dataset ds = data::generate_dataset(5, 2, small_scene());
  const std::vector<std::size_t> rows{4, 1};
  const data::Batch b = ds.batch(rows);
  EXPECT_EQ(b.images.shape(), (Shape{2, 1, 8, 8}));
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(b.images[i], ds.images[4 * 64 + i]);
    EXPECT_EQ(b.targets.at("depth")[64 + i], ds.targets.at("depth")[64 + i]);
  }
  EXPECT_EQ(ds.subset(rows).size(), 2u);
  EXPECT_THROW(ds.batch(std::vector<std::size_t>{5}), InvalidArgument);
  EXPECT_EQ(ds.task_names().size(), 5u);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

FormatError::Kind read_error(const std::filesystem::path& p) {
  try {
    data::read_dataset(p);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a FormatError";
  return FormatError::Kind::kMalformed;
}

TEST(DatasetIo, RoundTrip) {
  TempDir dir;
  const data::Dataset ds = data::generate_dataset(7, 5, small_scene(12));
  data::write_dataset(ds, dir / "d.mtds");
  const data::Dataset back = data::read_dataset(dir / "d.mtds");
  EXPECT_TRUE(back.same_content(ds));
  EXPECT_TRUE(back.scene_seeds.empty());
  EXPECT_EQ(back.params.num_classes, ds.params.num_classes);
  data::write_dataset(back, dir / "e.mtds");
  EXPECT_EQ(slurp(dir / "d.mtds"), slurp(dir / "e.mtds"));
}

TEST(DatasetIo, CorruptionIsReportedDistinctly) {
  TempDir dir;
  data::write_dataset(data::generate_dataset(3, 5, small_scene()), dir / "ok.mtds");
  const std::string good = slurp(dir / "ok.mtds");

  std::string bad = good;
  bad[1] = 'X';
  dump(dir / "magic.mtds", bad);
  EXPECT_EQ(read_error(dir / "magic.mtds"), FormatError::Kind::kBadMagic);

  bad = good;
  bad[4] = 9;
  dump(dir / "version.mtds", bad);
  EXPECT_EQ(read_error(dir / "version.mtds"), FormatError::Kind::kVersionMismatch);

  dump(dir / "short.mtds", good.substr(0, good.size() - 1));
  EXPECT_EQ(read_error(dir / "short.mtds"), FormatError::Kind::kTruncated);
  dump(dir / "tiny.mtds", "MT");
  EXPECT_EQ(read_error(dir / "tiny.mtds"), FormatError::Kind::kTruncated);

  dump(dir / "trailing.mtds", good + "zz");
  EXPECT_EQ(read_error(dir / "trailing.mtds"), FormatError::Kind::kMalformed);

  EXPECT_THROW(data::read_dataset(dir / "missing.mtds"), IoError);
}

double mean_cross(const data::SandboxSamples& s, std::size_t i, std::size_t j) {
  double acc = 0.0;
  for (std::size_t n = 0; n < s.samples; ++n) acc += dot(s.gradient(n, i), s.gradient(n, j));
  return acc / static_cast<double>(s.samples);
}

TEST(Sandbox, IndependentTasksHaveZeroCrossCovariance) {
  data::GradientSandboxSpec spec;
  spec.tasks = 2;
  spec.samples = 10000;
  spec.seed = 3;
  const auto s = data::sample_task_gradients(spec);
  std::vector<double> cross(s.samples);
  for (std::size_t n = 0; n < s.samples; ++n) cross[n] = dot(s.gradient(n, 0), s.gradient(n, 1));
  double mean = 0.0, m2 = 0.0;
  for (double c : cross) mean += c;
  mean /= static_cast<double>(cross.size());
  for (double c : cross) m2 += (c - mean) * (c - mean);
  const double se = std::sqrt(m2 / static_cast<double>(cross.size() - 1) / static_cast<double>(cross.size()));
  EXPECT_LT(std::abs(mean), 3.0 * se);
  EXPECT_NEAR(mean_cross(s, 0, 0), 1.0, 0.03);
}

TEST(Sandbox, PerfectCorrelationGivesIdenticalGradients) {
  data::GradientSandboxSpec spec;
  spec.rho = 1.0;
  spec.samples = 50;
  const auto s = data::sample_task_gradients(spec);
  for (std::size_t n = 0; n < s.samples; ++n) {
    const auto a = s.gradient(n, 0), b = s.gradient(n, 1);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(Sandbox, ZeroVarianceGivesZeros) {
  data::GradientSandboxSpec spec;
  spec.variance = 0.0;
  spec.rho = 0.3;
  spec.samples = 10;
  for (double v : data::sample_task_gradients(spec).values) EXPECT_EQ(v, 0.0);
}

TEST(Sandbox, DeterministicUnderSeed) {
  data::GradientSandboxSpec spec;
  spec.samples = 20;
  spec.seed = 9;
  EXPECT_EQ(data::sample_task_gradients(spec).values, data::sample_task_gradients(spec).values);
  data::GradientSandbox stream(spec);
  std::vector<double> first(spec.tasks * spec.dimension);
  stream.next(first);
  const auto batch = data::sample_task_gradients(spec);
  EXPECT_TRUE(std::equal(first.begin(), first.end(), batch.values.begin()));
}

TEST(Sandbox, PsdRange) {
  EXPECT_TRUE(data::equicorrelation_is_psd(-1.0, 2));
  EXPECT_FALSE(data::equicorrelation_is_psd(-0.5, 4));
  EXPECT_TRUE(data::equicorrelation_is_psd(-1.0 / 3.0, 4));
  EXPECT_FALSE(data::equicorrelation_is_psd(1.01, 3));
  data::GradientSandboxSpec spec;
  spec.tasks = 4;
  spec.rho = -0.5;
  EXPECT_THROW(data::sample_task_gradients(spec), InvalidArgument);
}

// Error of the empirical covariance matrix, max over entries.
double covariance_error(std::size_t samples, double rho, std::uint64_t seed) {
  data::GradientSandboxSpec spec;
  spec.tasks = 3;
  spec.dimension = 20;
  spec.rho = rho;
  spec.samples = samples;
  spec.seed = seed;
  const auto s = data::sample_task_gradients(spec);
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double target = i == j ? 1.0 : rho;
      worst = std::max(worst, std::abs(mean_cross(s, i, j) - target));
    }
  return worst;
}

TEST(Sandbox, CovarianceConvergesAtRootNRate) {
  for (double rho : {-0.4, 0.0, 0.6}) {
    double err[3] = {0, 0, 0};
    const std::size_t ns[3] = {1000, 10000, 100000};
    for (int k = 0; k < 3; ++k) {
      // Average over replicates so the ratio is not dominated by one draw.
      for (std::uint64_t r = 0; r < 4; ++r) err[k] += covariance_error(ns[k], rho, 100 + r) / 4.0;
      // sqrt(N) * error stays bounded.
      EXPECT_LT(err[k] * std::sqrt(static_cast<double>(ns[k])), 3.0) << "rho=" << rho << " N=" << ns[k];
    }
    EXPECT_LT(err[2], err[0]);
    // Each decade shrinks the error by roughly sqrt(10); allow wide slack.
    EXPECT_LT(err[2] / err[0], 10.0 / std::sqrt(100.0) * 3.0);
  }
}

}  // namespace
}  // namespace mtr
