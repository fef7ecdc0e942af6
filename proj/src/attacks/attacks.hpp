// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tensor/tape.hpp"

namespace mtr::attacks {

enum class AttackKind { kFgsm, kPgd, kMim };

std::string_view to_string(AttackKind kind);
AttackKind attack_kind_from_string(std::string_view name);

/// L-infinity attack settings. epsilon and step_size are on the 0-255 pixel
/// scale and divided by 255 internally; inputs live in [0, 1].
struct AttackConfig {
  AttackKind kind = AttackKind::kPgd;
  double epsilon = 4.0;
  /// nullopt resolves through pgd_step_schedule(epsilon).
  std::optional<std::size_t> steps;
  double step_size = 1.0;
  bool random_start = false;  // pgd only
  double momentum = 1.0;      // mim only
  std::uint64_t seed = 0;     // random start stream
  /// Per-example random-start seeds for a batched input [N, ...]. Empty means
  /// row r uses derive_seed(seed, r).
  std::vector<std::uint64_t> row_seeds;

  void validate() const;
  /// Iteration count after schedule resolution (1 for fgsm, 0 when epsilon
  /// is 0 and steps are automatic).
  std::size_t resolved_steps() const;
};

/// min(eps + 4, ceil(1.25 eps)) for eps > 0 on the 0-255 scale.
std::size_t pgd_step_schedule(double epsilon);

struct AttackStepRecord {
  std::size_t step = 0;
  double loss = 0.0;       // objective at the iterate the gradient was taken at
  double grad_norm = 0.0;  // L2 norm of that gradient
};

/// Structured diagnostics of one attack run.
struct AttackTrace {
  std::vector<AttackStepRecord> steps;
  /// Every iterate, starting with the (projected) start point; filled only
  /// when record_iterates is set.
  std::vector<Tensor> iterates;
  bool record_iterates = false;
  /// Steps at which mim found a zero gradient and skipped normalisation.
  std::vector<std::size_t> zero_gradient_steps;
  std::vector<std::string> notes;
};

/// clamp(x + eps * sign(grad), 0, 1) with sign(0) = 0.
Tensor fgsm(const ad::InputLoss& loss, const Tensor& x, double epsilon, AttackTrace* trace = nullptr);

/// Iterated sign-gradient ascent. Each iterate is projected onto the
/// eps-ball around x, then clamped to [0, 1]. The optional random start is
/// uniform in the eps-ball, drawn per example row, then projected.
Tensor pgd(const ad::InputLoss& loss, const Tensor& x, const AttackConfig& config, AttackTrace* trace = nullptr);

/// Momentum variant: g_t = mu g_{t-1} + grad / |grad|_1, step along sign(g_t).
/// The L1 normalisation is per example row (axis 0), so batching examples
/// does not couple them. A row with zero gradient skips normalisation.
Tensor mim(const ad::InputLoss& loss, const Tensor& x, const AttackConfig& config, AttackTrace* trace = nullptr);

/// Dispatches on config.kind.
Tensor run_attack(const ad::InputLoss& loss, const Tensor& x, const AttackConfig& config,
                  AttackTrace* trace = nullptr);

/// Projection onto {y : |y - x|_inf <= radius} intersected with [0, 1]^n.
void project_in_place(Tensor& y, const Tensor& x, double radius);

}  // namespace mtr::attacks
