// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace mtr::metrics {

/// K x K counts over (true class, predicted class).
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t num_classes, std::optional<std::size_t> ignore_label = std::nullopt);

  /// Scores one pixel per element. Pixels whose target equals the ignore
  /// label are skipped; any other out-of-range label is an error.
  void add(std::span<const std::size_t> predicted, std::span<const std::size_t> target);
  void merge(const ConfusionAccumulator& other);

  std::size_t num_classes() const noexcept { return k_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::uint64_t total() const noexcept { return total_; }

  /// IoU per class; nullopt for classes absent from both prediction and truth.
  std::vector<std::optional<double>> class_iou() const;

  /// Mean IoU over classes present in prediction or truth.
  double miou() const;

 private:
  std::size_t k_;
  std::optional<std::size_t> ignore_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Argmax along axis 1 of [N, K, ...] logits; ties go to the lowest index.
std::vector<std::size_t> argmax_classes(const Tensor& logits);

/// Converts a tensor of integral class values to indices, checking range.
std::vector<std::size_t> class_indices(const Tensor& labels, std::size_t num_classes);

double abs_error(std::span<const double> pred, std::span<const double> target);
double mse(std::span<const double> pred, std::span<const double> target);

}  // namespace mtr::metrics
