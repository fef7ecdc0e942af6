// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "common/rng.hpp"

namespace mtr::data {

/// Synthetic per-task input gradients with equal pairwise correlation.
///
/// Covariance between task gradients is the expected inner product
/// E[r_i . r_j]. Each r_i has E|r_i|^2 = variance and E[r_i . r_j] =
/// rho * variance for i != j.
struct GradientSandboxSpec {
  std::size_t dimension = 100;
  std::size_t tasks = 2;
  double variance = 1.0;
  double rho = 0.0;
  std::size_t samples = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// True when the equicorrelation matrix (1 - rho) I + rho 11^T of order
/// `tasks` is positive semidefinite, i.e. -1/(M-1) <= rho <= 1.
bool equicorrelation_is_psd(double rho, std::size_t tasks);

/// Streams samples one at a time; each sample is M gradients of length d
/// laid out task-major.
///
/// rho >= 0 uses r_i = sqrt(rho) z + sqrt(1 - rho) u_i with z, u_i drawn
/// i.i.d. from N(0, variance I / d). Negative rho uses the centred form
/// r_i = sqrt(1 - rho) (u_i - t mean(u)) with t chosen to hit rho.
class GradientSandbox {
 public:
  explicit GradientSandbox(const GradientSandboxSpec& spec);

  const GradientSandboxSpec& spec() const noexcept { return spec_; }
  void next(std::span<double> out);

 private:
  GradientSandboxSpec spec_;
  Rng rng_;
  std::normal_distribution<double> normal_;
  std::vector<double> shared_;
  std::vector<double> own_;
};

struct SandboxSamples {
  std::size_t samples = 0;
  std::size_t tasks = 0;
  std::size_t dimension = 0;
  std::vector<double> values;  // [samples][tasks][dimension]

  std::span<const double> gradient(std::size_t sample, std::size_t task) const {
    return std::span<const double>(values).subspan((sample * tasks + task) * dimension, dimension);
  }
};

SandboxSamples sample_task_gradients(const GradientSandboxSpec& spec);

}  // namespace mtr::data
