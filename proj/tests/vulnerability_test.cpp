// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "data/sandbox.hpp"
#include "nn/objective.hpp"
#include "nn/train.hpp"
#include "tensor/ops.hpp"
#include "test_util.hpp"
#include "vulnerability/vulnerability.hpp"

namespace mtr {
namespace {

using testing::numeric_gradient;
using testing::random_tensor;
using testing::small_model;
using testing::small_scene;
using testing::uniform_index;

ad::InputLoss linear_loss(const Tensor& w) {
  return [w](ad::Tape& tape, const ad::Var& x) { return ad::sum(ad::mul(x, tape.constant(w))); };
}

ad::InputLoss smooth_loss(Rng& rng, const Shape& xs) {
  const Tensor k = random_tensor({2, xs[1], 3, 3}, rng, -1.0, 1.0);
  const Tensor c = random_tensor({xs[0], 2, xs[2], xs[3]}, rng);
  return [k, c](ad::Tape& tape, const ad::Var& x) {
    return ad::sum(ad::mul(ad::sigmoid(ad::conv2d(x, tape.constant(k))), tape.constant(c)));
  };
}

TEST(DualNorm, Conjugates) {
  EXPECT_EQ(vuln::DualNormSpec{vuln::kInfinity}.q(), 1.0);
  EXPECT_EQ(vuln::DualNormSpec{2.0}.q(), 2.0);
  EXPECT_DOUBLE_EQ(vuln::DualNormSpec{3.0}.q(), 1.5);
  EXPECT_THROW(vuln::DualNormSpec{1.0}.validate(), InvalidArgument);
  const std::vector<double> v{3.0, -4.0};
  EXPECT_EQ(vuln::lp_norm(v, 1.0), 7.0);
  EXPECT_EQ(vuln::lp_norm(v, 2.0), 5.0);
  EXPECT_EQ(vuln::lp_norm(v, vuln::kInfinity), 4.0);
  EXPECT_THROW(vuln::lp_norm(v, 0.5), InvalidArgument);
}

TEST(JointGradient, Examples) {
  const auto j = [](std::vector<Tensor> g) { return vuln::joint_gradient(g); };
  EXPECT_EQ(j({Tensor::from({1, 0}), Tensor::from({-1, 0})}), Tensor::from({0, 0}));
  EXPECT_EQ(j({Tensor::from({0.3, 2}), Tensor::from({0.3, 2})}), Tensor::from({0.3, 2}));
  EXPECT_EQ(j({Tensor::from({3, 0}), Tensor::from({0, 3}), Tensor::from({0, 0})}), Tensor::from({1, 1}));
  EXPECT_THROW(j({}), InvalidArgument);
  EXPECT_THROW(j({Tensor::from({1}), Tensor::from({1, 2})}), ShapeError);
}

TEST(JointGradient, NormNeverExceedsLargestTaskNorm) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = uniform_index(rng, 2, 6), d = uniform_index(rng, 2, 30);
    std::vector<Tensor> g;
    double largest = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      g.push_back(random_tensor({d}, rng));
      largest = std::max(largest, l2_norm(g.back().data()));
    }
    // Random vectors in d >= 2 are non-parallel almost surely.
    EXPECT_LT(l2_norm(vuln::joint_gradient(g).data()), largest);
  }
}

TEST(FirstOrderVulnerability, LinearModelsAreExact) {
  Rng rng(2);
  for (int model = 0; model < 20; ++model) {
    const Shape s{1, 1, 4, 5};
    const Tensor w = random_tensor(s, rng);
    const Tensor x = random_tensor(s, rng, 0.0, 1.0);
    const double r = std::uniform_real_distribution<double>(1e-3, 0.1)(rng);
    const std::vector<vuln::LossPoint> sample{{linear_loss(w), x}};
    for (double p : {2.0, vuln::kInfinity}) {
      const vuln::DualNormSpec norm{p};
      const double predicted = vuln::first_order_vulnerability(sample, r, norm);
      const double closed = r * vuln::lp_norm(w.data(), norm.q());
      const double brute = vuln::empirical_delta_loss(linear_loss(w), x, r, norm, 100, model);
      EXPECT_NEAR(predicted, closed, 1e-9 * closed);
      EXPECT_NEAR(brute, predicted, 1e-9 * predicted) << "p=" << p;
    }
    EXPECT_NEAR(vuln::first_order_vulnerability(sample, std::nullopt, {vuln::kInfinity}), l1_norm(w.data()), 1e-12);
  }
}

TEST(FirstOrderVulnerability, ConstantModelHasZeroVulnerability) {
  const Shape s{1, 1, 3, 3};
  const std::vector<vuln::LossPoint> sample{{linear_loss(Tensor(s, 0.0)), Tensor(s, 0.5)}};
  EXPECT_EQ(vuln::first_order_vulnerability(sample, 0.1, {}), 0.0);
  EXPECT_THROW(vuln::first_order_vulnerability({}, 0.1, {}), InvalidArgument);
}

TEST(FirstOrderVulnerability, NonlinearNetMatchesBruteForceAtSmallRadius) {
  Rng rng(3);
  const Shape s{1, 1, 5, 5};
  const auto loss = smooth_loss(rng, s);
  const Tensor x = random_tensor(s, rng, 0.0, 1.0);
  const double r = 1e-3;
  const std::vector<vuln::LossPoint> sample{{loss, x}};
  const double predicted = vuln::first_order_vulnerability(sample, r, {vuln::kInfinity});
  const double brute = vuln::empirical_delta_loss(loss, x, r, {vuln::kInfinity}, 100000, 7);
  EXPECT_NEAR(predicted, brute, 0.25 * brute);
}

TEST(EmpiricalDelta, ZeroRadiusAndMonotone) {
  Rng rng(4);
  const Shape s{1, 1, 3, 3};
  const Tensor w = random_tensor(s, rng);
  const Tensor x = random_tensor(s, rng, 0.0, 1.0);
  EXPECT_EQ(vuln::empirical_delta_loss(smooth_loss(rng, s), x, 0.0, {}, 10, 0), 0.0);
  double last = 0.0;
  for (double r : {0.001, 0.01, 0.05, 0.2}) {
    const double v = vuln::empirical_delta_loss(linear_loss(w), x, r, {}, 10, 0);
    EXPECT_GE(v, last);
    last = v;
  }
  EXPECT_THROW(vuln::empirical_delta_loss(linear_loss(w), x, 0.1, {}, 0, 0), InvalidArgument);
  EXPECT_THROW(vuln::empirical_delta_loss(linear_loss(w), x, 0.1, {3.0}, 5, 0), InvalidArgument);
}

TEST(JointNormPrediction, ClosedFormExamples) {
  EXPECT_EQ(vuln::joint_norm_prediction(std::vector<double>{2.5}, 1), 1.0);
  EXPECT_DOUBLE_EQ(vuln::joint_norm_prediction(std::vector<double>{1, 1, 1, 1}, 2), 1.0);
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  EXPECT_DOUBLE_EQ(vuln::joint_norm_prediction(eye, 4), 0.5);
  EXPECT_EQ(vuln::uncorrelated_prediction(1), 1.0);
  EXPECT_EQ(vuln::uncorrelated_prediction(4), 0.5);
  EXPECT_EQ(vuln::uncorrelated_prediction(16), 0.25);
  EXPECT_THROW(vuln::uncorrelated_prediction(0), InvalidArgument);
  EXPECT_THROW(vuln::joint_norm_prediction(std::vector<double>{0, 0, 0, 1}, 2), InvalidArgument);
  EXPECT_THROW(vuln::joint_norm_prediction(std::vector<double>{1, 0.5, 0.2, 1}, 2), InvalidArgument);
  EXPECT_THROW(vuln::joint_norm_prediction(std::vector<double>{1, 0.5, 0.5}, 2), ShapeError);
}

TEST(JointNormPrediction, EquicorrelatedMatrixReducesToScalarForm) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = uniform_index(rng, 1, 12);
    const double lo = m > 1 ? -1.0 / static_cast<double>(m - 1) : 0.0;
    const double rho = std::uniform_real_distribution<double>(lo, 1.0)(rng);
    const double sigma2 = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    std::vector<double> c(m * m, rho * sigma2);
    for (std::size_t i = 0; i < m; ++i) c[i * m + i] = sigma2;
    const double expected = std::sqrt((1.0 + (static_cast<double>(m) - 1.0) * rho) / static_cast<double>(m));
    EXPECT_NEAR(vuln::joint_norm_prediction(c, m), expected, 1e-12);
    EXPECT_NEAR(vuln::equicorrelated_prediction(c, m), expected, 1e-12);
  }
}

TEST(JointNormPrediction, MatrixFormMatchesExpandedSquaredNorm) {
  // Independent oracle: for equal diagonals, E|mean r|^2 / sigma^2 expands
  // to (1/M^2)(sum_i C_ii + 2 sum_{i<j} C_ij) / sigma^2.
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = uniform_index(rng, 2, 6), d = 8;
    std::vector<Tensor> basis;
    for (std::size_t i = 0; i < m; ++i) basis.push_back(random_tensor({d}, rng));
    // Equal norms give a common diagonal.
    for (Tensor& b : basis) {
      const double n = l2_norm(b.data());
      for (double& v : b.data()) v /= n;
    }
    std::vector<double> c(m * m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        c[i * m + j] = dot(basis[i].data(), basis[j].data());
        total += c[i * m + j];
      }
    const double oracle = std::sqrt(total) / static_cast<double>(m);
    EXPECT_NEAR(vuln::joint_norm_prediction(c, m), oracle, 1e-12);
    EXPECT_NEAR(l2_norm(vuln::joint_gradient(basis).data()), oracle, 1e-12);
  }
}

std::vector<std::vector<std::vector<double>>> as_grads(const data::SandboxSamples& s) {
  std::vector<std::vector<std::vector<double>>> g(s.tasks);
  for (std::size_t t = 0; t < s.tasks; ++t)
    for (std::size_t n = 0; n < s.samples; ++n) {
      const auto v = s.gradient(n, t);
      g[t].emplace_back(v.begin(), v.end());
    }
  return g;
}

TEST(Covariance, SandboxTargets) {
  data::GradientSandboxSpec spec;
  spec.dimension = 10;
  spec.tasks = 3;
  spec.rho = 0.5;
  spec.samples = 100000;
  spec.seed = 4;
  const auto cov = vuln::gradient_covariance(as_grads(data::sample_task_gradients(spec)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(cov.at(cov.raw, i, j), cov.at(cov.raw, j, i));
      if (i != j) {
        EXPECT_NEAR(cov.at(cov.raw, i, j), 0.5, 0.025);
        EXPECT_NEAR(cov.at(cov.centered, i, j), 0.5, 0.025);
      }
    }

  spec.rho = 0.0;
  spec.samples = 10000;
  const auto ind = vuln::gradient_covariance(as_grads(data::sample_task_gradients(spec)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      EXPECT_LT(std::abs(ind.at(ind.raw, i, j)), 3.0 * ind.at(ind.raw_stderr, i, j));
    }
}

TEST(Covariance, CenteringAndDuplicates) {
  // Two samples of one 2-d gradient, duplicated as two tasks.
  const std::vector<std::vector<double>> task{{1.0, 2.0}, {3.0, 0.0}};
  const auto cov = vuln::gradient_covariance({task, task});
  // raw = mean(|g|^2) = (5 + 9) / 2; mean g = (2, 1), |mean|^2 = 5.
  EXPECT_DOUBLE_EQ(cov.at(cov.raw, 0, 0), 7.0);
  EXPECT_DOUBLE_EQ(cov.at(cov.centered, 0, 0), 2.0);
  EXPECT_EQ(cov.at(cov.raw, 0, 1), cov.at(cov.raw, 0, 0));
  EXPECT_EQ(cov.at(cov.centered, 0, 1), cov.at(cov.centered, 1, 1));
  EXPECT_DOUBLE_EQ(cov.mean_norm[0], std::sqrt(5.0));
  EXPECT_THROW(vuln::gradient_covariance({}), InvalidArgument);
  EXPECT_THROW(vuln::gradient_covariance({task, {{1.0, 2.0}}}), ShapeError);
}

TEST(Covariance, OrderIndependent) {
  data::GradientSandboxSpec spec;
  spec.dimension = 16;
  spec.tasks = 2;
  spec.rho = 0.3;
  spec.samples = 2000;
  auto g = as_grads(data::sample_task_gradients(spec));
  const auto a = vuln::gradient_covariance(g);
  Rng rng(1);
  std::vector<std::size_t> perm(spec.samples);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto h = g;
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t n = 0; n < spec.samples; ++n) h[t][n] = g[t][perm[n]];
  const auto b = vuln::gradient_covariance(h);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(a.raw[i], b.raw[i], 1e-12 * std::abs(a.raw[i]));
    EXPECT_NEAR(a.centered[i], b.centered[i], 1e-12 * std::max(1.0, std::abs(a.centered[i])));
  }
}

TEST(Spearman, KnownValues) {
  const std::vector<double> up{1, 2, 3, 4}, down{9, 7, 5, 1};
  EXPECT_DOUBLE_EQ(vuln::spearman(up, up), 1.0);
  EXPECT_DOUBLE_EQ(vuln::spearman(up, down), -1.0);
  // Average ranks for ties: {1, 2.5, 2.5, 4} against {1, 2, 3, 4}.
  EXPECT_NEAR(vuln::spearman(std::vector<double>{1, 2, 2, 3}, up), 4.5 / std::sqrt(4.5 * 5.0), 1e-15);
  // Invariant under monotone transforms.
  EXPECT_DOUBLE_EQ(vuln::spearman(std::vector<double>{1, 10, 100, 1000}, std::vector<double>{0.1, 0.3, 0.2, 0.4}),
                   vuln::spearman(up, std::vector<double>{1, 3, 2, 4}));
  EXPECT_THROW(vuln::spearman(std::vector<double>{1}, std::vector<double>{1}), InvalidArgument);
}

TEST(SamplePixels, DistinctSortedInRange) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = uniform_index(rng, 1, 300), k = uniform_index(rng, 1, n);
    const auto p = vuln::sample_pixels(n, k, rng);
    ASSERT_EQ(p.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_LT(p[i], n);
      if (i) {
        EXPECT_LT(p[i - 1], p[i]);
      }
    }
  }
  EXPECT_THROW(vuln::sample_pixels(3, 4, rng), InvalidArgument);
}

class SmallModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_ = new data::Dataset(data::generate_dataset(48, 2, small_scene(), "train"));
    test_ = new data::Dataset(data::generate_dataset(10, 2, small_scene(), "test"));
    model_ = new nn::SharedBackboneModel(
        nn::SharedBackboneModel::build(small_model({"seg", "depth", "edge"}, 8, 8), 4));
    nn::TrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 8;
    tc.sgd.learning_rate = 0.05;
    nn::train(*model_, *train_, {{"seg", 1.0}, {"depth", 1.0}, {"edge", 1.0}}, tc);
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete model_;
  }
  static data::Dataset* train_;
  static data::Dataset* test_;
  static nn::SharedBackboneModel* model_;
};

data::Dataset* SmallModel::train_ = nullptr;
data::Dataset* SmallModel::test_ = nullptr;
nn::SharedBackboneModel* SmallModel::model_ = nullptr;

TEST_F(SmallModel, PerTaskGradients) {
  const data::Batch ex = test_->example(0);
  const auto single = vuln::per_task_gradients(*model_, ex.images, ex.targets, {"depth"});
  ASSERT_EQ(single.size(), 1u);
  const auto depth_loss = nn::task_input_loss(*model_, ex.targets.at("depth"), "depth");
  EXPECT_EQ(single[0], ad::grad_wrt_input(depth_loss, ex.images));

  const auto dup = vuln::per_task_gradients(*model_, ex.images, ex.targets, {"seg", "seg"});
  EXPECT_EQ(dup[0], dup[1]);
  EXPECT_THROW(vuln::per_task_gradients(*model_, ex.images, ex.targets, {}), InvalidArgument);

  // Central differences on the smooth losses (depth's l1 has kinks).
  for (const std::string task : {"seg", "edge"}) {
    const Tensor g = vuln::per_task_gradients(*model_, ex.images, ex.targets, {task})[0];
    const Tensor fd = numeric_gradient(nn::task_input_loss(*model_, ex.targets.at(task), task), ex.images, 1e-5);
    std::vector<double> diff(g.numel());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = g[i] - fd[i];
    const double err = l2_norm(diff);
    EXPECT_LT(err, 1e-4 * l2_norm(g.data())) << task;
  }
}

TEST_F(SmallModel, PerExampleGradientsMatchSingleExampleCalls) {
  const auto all = vuln::per_example_gradients(*model_, *test_, {"seg", "edge"}, 1.0, 3);
  for (std::size_t i = 0; i < test_->size(); ++i) {
    const data::Batch ex = test_->example(i);
    const auto r = vuln::per_task_gradients(*model_, ex.images, ex.targets, {"seg", "edge"});
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < r[c].numel(); ++k) EXPECT_NEAR(all[c][i][k], r[c][k], 1e-15);
    }
  }
}

TEST_F(SmallModel, ReportScaleCovariance) {
  const std::vector<std::string> tasks{"seg", "depth", "edge"};
  const auto base = vuln::vulnerability_report(*model_, *test_, tasks, 1.0);
  EXPECT_EQ(base.samples, test_->size());
  EXPECT_EQ(base.covariance.tasks, 3u);
  EXPECT_EQ(base.predicted_ratio_uncorrelated, 1.0 / std::sqrt(3.0));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_GE(base.covariance.at(base.covariance.raw, i, i), 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(base.covariance.at(base.covariance.raw, i, j), base.covariance.at(base.covariance.raw, j, i));
    }
  }
  for (double s : {0.1, 10.0}) {
    const auto scaled = vuln::vulnerability_report(*model_, *test_, tasks, s);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(scaled.task_norms[c], s * base.task_norms[c], 1e-9 * s * base.task_norms[c]);
    EXPECT_NEAR(scaled.joint_norm, s * base.joint_norm, 1e-9 * s * base.joint_norm);
    EXPECT_NEAR(scaled.joint_rms, s * base.joint_rms, 1e-9 * s * base.joint_rms);
    EXPECT_NEAR(scaled.predicted_ratio, base.predicted_ratio, 1e-12);
    EXPECT_NEAR(scaled.predicted_ratio_raw, base.predicted_ratio_raw, 1e-12);
  }
}

TEST_F(SmallModel, SubsampledVulnerability) {
  const data::Batch ex = test_->example(1);
  const Tensor& y = ex.targets.at("seg");
  const std::size_t pixels = 64;
  const double full = l2_norm(ad::grad_wrt_input(nn::task_input_loss(*model_, y, "seg"), ex.images).data());
  EXPECT_NEAR(vuln::subsample_output_vulnerability(*model_, ex.images, y, "seg", pixels, 3, 1), full, 1e-12 * full);
  EXPECT_EQ(vuln::subsample_output_vulnerability(*model_, ex.images, y, "seg", 1, 4, 9),
            vuln::subsample_output_vulnerability(*model_, ex.images, y, "seg", 1, 4, 9));
  EXPECT_THROW(vuln::subsample_output_vulnerability(*model_, ex.images, y, "seg", 0, 1, 0), InvalidArgument);
  EXPECT_THROW(vuln::subsample_output_vulnerability(*model_, ex.images, y, "seg", pixels + 1, 1, 0),
               InvalidArgument);
  const auto curve = vuln::subsample_curve(*model_, *test_, "seg", {1, 4, 16, 64}, 4, 3);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_GT(curve.front(), curve.back());
}

// Shared scene geometry couples the seg and depth input gradients; drawing
// each target from its own layout removes the coupling.
double seg_depth_cross_moment_z(bool correlated) {
  data::SceneParams p = small_scene();
  p.correlated = correlated;
  const data::Dataset train = data::generate_dataset(96, 5, p, "train");
  const data::Dataset test = data::generate_dataset(200, 5, p, "test");
  auto m = nn::SharedBackboneModel::build(small_model({"seg", "depth"}, 8, 8), 6);
  nn::TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 16;
  tc.sgd.learning_rate = 0.05;
  nn::train(m, train, {{"seg", 1.0}, {"depth", 1.0}}, tc);
  const auto cov = vuln::gradient_covariance(vuln::per_example_gradients(m, test, {"seg", "depth"}));
  return cov.at(cov.raw, 0, 1) / cov.at(cov.raw_stderr, 0, 1);
}

TEST(TaskCorrelation, SharedGeometryGivesPositiveCovariance) { EXPECT_GT(seg_depth_cross_moment_z(true), 3.0); }

TEST(TaskCorrelation, IndependentGeometryGivesNoCovariance) {
  EXPECT_LT(std::abs(seg_depth_cross_moment_z(false)), 3.0);
}

}  // namespace
}  // namespace mtr
