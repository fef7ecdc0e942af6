// SPDX-License-Identifier: Apache-2.0
#include "data/sandbox.hpp"

#include <cmath>
#include <string>

#include "common/error.hpp"

namespace mtr::data {

bool equicorrelation_is_psd(double rho, std::size_t tasks) {
  if (!std::isfinite(rho) || rho > 1.0) return false;
  if (tasks <= 1) return true;
  return rho >= -1.0 / static_cast<double>(tasks - 1);
}

void GradientSandboxSpec::validate() const {
  if (dimension < 1) throw InvalidArgument("sandbox dimension must be positive");
  if (tasks < 1) throw InvalidArgument("sandbox needs at least one task");
  if (samples < 1) throw InvalidArgument("sandbox needs at least one sample");
  if (!(variance >= 0.0) || !std::isfinite(variance)) throw InvalidArgument("sandbox variance must be >= 0");
  if (!equicorrelation_is_psd(rho, tasks)) {
    throw InvalidArgument("rho = " + std::to_string(rho) + " outside the PSD range for M = " + std::to_string(tasks));
  }
}

GradientSandbox::GradientSandbox(const GradientSandboxSpec& spec)
    : spec_(spec),
      rng_(spec.seed),
      normal_(0.0, std::sqrt(spec.variance / static_cast<double>(spec.dimension))),
      shared_(spec.dimension),
      own_(spec.tasks * spec.dimension) {
  spec_.validate();
}

void GradientSandbox::next(std::span<double> out) {
  const std::size_t m = spec_.tasks, d = spec_.dimension;
  if (out.size() != m * d) throw ShapeError("sandbox: output span must hold tasks * dimension values");
  const double rho = spec_.rho;
  if (spec_.variance == 0.0) {
    for (double& v : out) v = 0.0;
    return;
  }
  if (rho >= 0.0) {
    const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
    for (double& v : shared_) v = normal_(rng_);
    for (std::size_t t = 0; t < m; ++t)
      for (std::size_t k = 0; k < d; ++k) {
        // Draw even when b == 0 so the stream layout does not depend on rho.
        const double u = normal_(rng_);
        out[t * d + k] = a * shared_[k] + b * u;
      }
    return;
  }
  // rho < 0 (M >= 2). With s = rho / (1 - rho), t = 1 - sqrt(1 + M s).
  const double md = static_cast<double>(m);
  const double s = rho / (1.0 - rho);
  const double t = 1.0 - std::sqrt(std::max(0.0, 1.0 + md * s));
  const double amp = std::sqrt(1.0 - rho);
  for (double& v : own_) v = normal_(rng_);
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += own_[i * d + k];
    mean /= md;
    for (std::size_t i = 0; i < m; ++i) out[i * d + k] = amp * (own_[i * d + k] - t * mean);
  }
}

SandboxSamples sample_task_gradients(const GradientSandboxSpec& spec) {
  spec.validate();
  GradientSandbox sandbox(spec);
  SandboxSamples s{spec.samples, spec.tasks, spec.dimension, std::vector<double>(spec.samples * spec.tasks * spec.dimension)};
  const std::size_t block = spec.tasks * spec.dimension;
  for (std::size_t n = 0; n < spec.samples; ++n) {
    sandbox.next(std::span<double>(s.values).subspan(n * block, block));
  }
  return s;
}

}  // namespace mtr::data
