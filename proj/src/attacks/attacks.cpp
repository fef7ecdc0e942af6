// SPDX-License-Identifier: Apache-2.0
#include "attacks/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace mtr::attacks {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_input(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("attack input must lie in [0, 1]");
  }
}

ad::ValueAndGrad gradient_at(const ad::InputLoss& loss, const Tensor& x, std::string_view attack, std::size_t step) {
  try {
    return ad::value_and_grad_wrt_input(loss, x);
  } catch (const NumericError& e) {
    throw NumericError(std::string(attack) + ": non-finite value at step " + std::to_string(step) + ": " + e.what());
  }
}

void record(AttackTrace* trace, std::size_t step, const ad::ValueAndGrad& vg) {
  if (trace) trace->steps.push_back({step, vg.value, l2_norm(vg.grad.data())});
}

void record_iterate(AttackTrace* trace, const Tensor& t) {
  if (trace && trace->record_iterates) trace->iterates.push_back(t);
}

/// One ascent step y = x_t + a * sign(direction), projected.
Tensor sign_step(const Tensor& xt, const Tensor& direction, const Tensor& x, double a, double radius) {
  Tensor y = xt;
  auto yv = y.data();
  auto d = direction.data();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = yv[i] + a * sign(d[i]);
  project_in_place(y, x, radius);
  return y;
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm:
      return "fgsm";
    case AttackKind::kPgd:
      return "pgd";
    case AttackKind::kMim:
      return "mim";
  }
  return "?";
}

AttackKind attack_kind_from_string(std::string_view name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "mim") return AttackKind::kMim;
  throw InvalidArgument("unknown attack kind '" + std::string(name) + "'");
}

std::size_t pgd_step_schedule(double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("pgd_step_schedule: epsilon must be positive");
  return static_cast<std::size_t>(std::min(epsilon + 4.0, std::ceil(1.25 * epsilon)));
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("attack epsilon must be nonnegative");
  if (steps && *steps < 1) throw InvalidArgument("attack steps must be at least 1");
  if (kind != AttackKind::kFgsm && !(step_size > 0.0)) throw InvalidArgument("attack step size must be positive");
  if (kind == AttackKind::kMim && !(momentum >= 0.0)) throw InvalidArgument("mim momentum must be nonnegative");
}

std::size_t AttackConfig::resolved_steps() const {
  if (kind == AttackKind::kFgsm) return 1;
  if (steps) return *steps;
  return epsilon > 0.0 ? pgd_step_schedule(epsilon) : 0;
}

void project_in_place(Tensor& y, const Tensor& x, double radius) {
  if (y.shape() != x.shape()) throw ShapeError("projection shape mismatch");
  auto yv = y.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < yv.size(); ++i) {
    double v = std::min(std::max(yv[i], xv[i] - radius), xv[i] + radius);
    yv[i] = std::min(std::max(v, 0.0), 1.0);
  }
}

Tensor fgsm(const ad::InputLoss& loss, const Tensor& x, double epsilon, AttackTrace* trace) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("attack epsilon must be nonnegative");
  check_input(x);
  record_iterate(trace, x);
  if (epsilon == 0.0) return x;
  const double e = epsilon / 255.0;
  const ad::ValueAndGrad vg = gradient_at(loss, x, "fgsm", 0);
  record(trace, 0, vg);
  Tensor y = sign_step(x, vg.grad, x, e, e);
  record_iterate(trace, y);
  return y;
}

Tensor pgd(const ad::InputLoss& loss, const Tensor& x, const AttackConfig& config, AttackTrace* trace) {
  config.validate();
  check_input(x);
  if (config.epsilon == 0.0) {
    record_iterate(trace, x);
    return x;
  }
  const double e = config.epsilon / 255.0;
  const double a = config.step_size / 255.0;
  Tensor xt = x;
  if (config.random_start) {
    const std::size_t rows = x.rank() > 0 ? x.dim(0) : 1;
    if (!config.row_seeds.empty() && config.row_seeds.size() != rows) {
      throw InvalidArgument("attack row_seeds must have one seed per example row");
    }
    const std::size_t per_row = x.numel() / rows;
    auto v = xt.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::uint64_t s = config.row_seeds.empty() ? derive_seed(config.seed, r) : config.row_seeds[r];
      Rng rng(derive_seed(s, "pgd-start"));
      std::uniform_real_distribution<double> u(-e, e);
      for (std::size_t i = r * per_row; i < (r + 1) * per_row; ++i) v[i] += u(rng);
    }
    project_in_place(xt, x, e);
  }
  record_iterate(trace, xt);
  const std::size_t steps = config.resolved_steps();
  for (std::size_t t = 0; t < steps; ++t) {
    const ad::ValueAndGrad vg = gradient_at(loss, xt, "pgd", t);
    record(trace, t, vg);
    xt = sign_step(xt, vg.grad, x, a, e);
    record_iterate(trace, xt);
  }
  return xt;
}

Tensor mim(const ad::InputLoss& loss, const Tensor& x, const AttackConfig& config, AttackTrace* trace) {
  config.validate();
  check_input(x);
  if (config.epsilon == 0.0) {
    record_iterate(trace, x);
    return x;
  }
  const double e = config.epsilon / 255.0;
  const double a = config.step_size / 255.0;
  Tensor xt = x;
  Tensor g(x.shape(), 0.0);
  const std::size_t rows = x.rank() > 0 ? x.dim(0) : 1;
  const std::size_t per_row = x.numel() / rows;
  record_iterate(trace, xt);
  const std::size_t steps = config.resolved_steps();
  for (std::size_t t = 0; t < steps; ++t) {
    const ad::ValueAndGrad vg = gradient_at(loss, xt, "mim", t);
    record(trace, t, vg);
    auto gv = g.data();
    auto dv = vg.grad.data();
    bool zero_row = false;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = dv.subspan(r * per_row, per_row);
      const double n1 = l1_norm(row);
      zero_row = zero_row || n1 == 0.0;
      for (std::size_t i = r * per_row; i < (r + 1) * per_row; ++i) {
        gv[i] = n1 > 0.0 ? config.momentum * gv[i] + dv[i] / n1 : config.momentum * gv[i] + dv[i];
      }
    }
    if (zero_row && trace) {
      trace->zero_gradient_steps.push_back(t);
      trace->notes.push_back("mim: zero gradient at step " + std::to_string(t) + ", normalisation skipped");
    }
    xt = sign_step(xt, g, x, a, e);
    record_iterate(trace, xt);
  }
  return xt;
}

Tensor run_attack(const ad::InputLoss& loss, const Tensor& x, const AttackConfig& config, AttackTrace* trace) {
  switch (config.kind) {
    case AttackKind::kFgsm:
      return fgsm(loss, x, config.epsilon, trace);
    case AttackKind::kPgd:
      return pgd(loss, x, config, trace);
    case AttackKind::kMim:
      return mim(loss, x, config, trace);
  }
  throw InvalidArgument("unsupported attack kind");
}

}  // namespace mtr::attacks
