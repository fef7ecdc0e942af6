// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "data/dataset.hpp"
#include "nn/model.hpp"
#include "nn/task.hpp"
#include "tensor/tape.hpp"

namespace mtr::vuln {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Norm order p in (1, inf] and its dual q with 1/p + 1/q = 1.
struct DualNormSpec {
  double p = kInfinity;

  double q() const;
  void validate() const;
};

/// |v|_p for p in [1, inf].
double lp_norm(std::span<const double> v, double p);

/// One loss closure evaluated at one input.
struct LossPoint {
  ad::InputLoss loss;
  Tensor x;
};

/// Mean over the sample of |d loss / dx|_q, times r when given (else the
/// gradient-norm factor alone).
double first_order_vulnerability(std::span<const LossPoint> sample, std::optional<double> radius,
                                 const DualNormSpec& norm);

/// max |L(x + delta) - L(x)| over `trials` uniform points of the p-ball of
/// radius r plus the two first-order extremes +-delta*, where delta* is
/// r sign(grad) for p = inf and r grad / |grad|_2 for p = 2. A lower bound on
/// the true maximum. No [0, 1] clamping is applied.
double empirical_delta_loss(const ad::InputLoss& loss, const Tensor& x, double radius, const DualNormSpec& norm,
                            std::size_t trials, std::uint64_t seed);

/// Elementwise mean of the gradients.
Tensor joint_gradient(std::span<const Tensor> gradients);

/// Per-task input gradients r_c = d(scale * L_c)/dx of one example or batch,
/// all against the same weights.
std::vector<Tensor> per_task_gradients(const nn::SharedBackboneModel& model, const Tensor& x,
                                       const data::TargetMap& targets, const std::vector<std::string>& tasks,
                                       double loss_scale = 1.0);

/// Per-example gradients over a dataset: result[c][i] is r_c of example i
/// (flattened). Examples are processed in chunks; each row's gradient is the
/// gradient of that example's own loss.
std::vector<std::vector<std::vector<double>>> per_example_gradients(const nn::SharedBackboneModel& model,
                                                                     const data::Dataset& dataset,
                                                                     const std::vector<std::string>& tasks,
                                                                     double loss_scale = 1.0,
                                                                     std::size_t chunk = 16);

struct CovarianceEstimate {
  std::size_t tasks = 0;
  std::size_t samples = 0;
  /// Row-major M x M matrices.
  std::vector<double> centered;    // mean r_i.r_j - mean(r_i).mean(r_j)
  std::vector<double> raw;         // mean r_i.r_j
  std::vector<double> raw_stderr;  // standard error of each raw entry
  std::vector<double> mean_norm;   // |mean r_c|_2 per task (zero-mean check)

  double at(const std::vector<double>& m, std::size_t i, std::size_t j) const { return m[i * tasks + j]; }
};

/// grads[c][s] is task c's gradient in sample s. Sums are compensated, so the
/// result is independent of summation order to rounding.
CovarianceEstimate gradient_covariance(const std::vector<std::vector<std::vector<double>>>& grads);

/// sqrt((1 + (2/M) sum_i sum_{j<i} C_ij / C_ii) / M) for a symmetric C with
/// positive diagonal, row-major M x M.
double joint_norm_prediction(std::span<const double> c, std::size_t m);
/// sqrt((1 + (M-1) rho) / M) with rho the mean off-diagonal over the mean
/// diagonal.
double equicorrelated_prediction(std::span<const double> c, std::size_t m);
/// 1 / sqrt(M).
double uncorrelated_prediction(std::size_t m);

struct VulnerabilityReport {
  std::vector<std::string> tasks;
  std::size_t samples = 0;
  std::vector<double> task_norms;  // E|r_c|_2
  double joint_norm = 0.0;         // E|R|_2
  double joint_rms = 0.0;          // sqrt(E|R|^2)
  CovarianceEstimate covariance;
  double predicted_ratio = 0.0;            // from the centred matrix
  double predicted_ratio_raw = 0.0;        // from raw second moments
  double equicorrelated_prediction = 0.0;  // equicorrelated form, centred matrix
  double predicted_ratio_uncorrelated = 0.0;
};

VulnerabilityReport vulnerability_report(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                         const std::vector<std::string>& tasks, double loss_scale = 1.0);

/// Mean per-pixel loss of `task` over the flat output pixels `pixels` of a
/// single example. `target` must outlive the closure.
ad::InputLoss pixel_subset_loss(const nn::SharedBackboneModel& model, const Tensor& target, const std::string& task,
                                std::vector<std::size_t> pixels);

/// `k` distinct pixel indices from [0, n), sorted.
std::vector<std::size_t> sample_pixels(std::size_t n, std::size_t k, Rng& rng);

/// Mean over `repeats` draws of |d/dx mean_{p in P} loss_p(x)|_2 where P is
/// k output pixels drawn uniformly without replacement. `x` is one example
/// [1, C, H, W].
double subsample_output_vulnerability(const nn::SharedBackboneModel& model, const Tensor& x, const Tensor& target,
                                      const std::string& task, std::size_t k, std::size_t repeats,
                                      std::uint64_t seed);

/// The above averaged over every example of `dataset`, for each k.
std::vector<double> subsample_curve(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                    const std::string& task, const std::vector<std::size_t>& ks,
                                    std::size_t repeats, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Neumaier-compensated sum.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace mtr::vuln
