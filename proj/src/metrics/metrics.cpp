// SPDX-License-Identifier: Apache-2.0
#include "metrics/metrics.hpp"

#include <cmath>
#include <string>

#include "common/error.hpp"

namespace mtr::metrics {

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes, std::optional<std::size_t> ignore_label)
    : k_(num_classes), ignore_(ignore_label), counts_(num_classes * num_classes, 0) {
  if (num_classes < 1) throw InvalidArgument("confusion accumulator needs at least one class");
}

void ConfusionAccumulator::add(std::span<const std::size_t> predicted, std::span<const std::size_t> target) {
  if (predicted.size() != target.size()) {
    throw ShapeError("confusion: prediction/target length mismatch");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (ignore_ && target[i] == *ignore_) continue;
    if (target[i] >= k_ || predicted[i] >= k_) {
      throw InvalidArgument("confusion: class index out of range");
    }
    ++counts_[target[i] * k_ + predicted[i]];
    ++total_;
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.k_ != k_) throw InvalidArgument("confusion: merging accumulators with different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

std::vector<std::optional<double>> ConfusionAccumulator::class_iou() const {
  std::vector<std::optional<double>> iou(k_);
  for (std::size_t c = 0; c < k_; ++c) {
    const std::uint64_t tp = count(c, c);
    std::uint64_t fn = 0, fp = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      if (j == c) continue;
      fn += count(c, j);
      fp += count(j, c);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0) iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double ConfusionAccumulator::miou() const {
  if (total_ == 0) throw InvalidArgument("miou: no scored pixels");
  double acc = 0.0;
  std::size_t present = 0;
  for (const auto& v : class_iou()) {
    if (!v) continue;
    acc += *v;
    ++present;
  }
  return acc / static_cast<double>(present);
}

std::vector<std::size_t> argmax_classes(const Tensor& logits) {
  const Shape& s = logits.shape();
  if (s.size() < 2) throw ShapeError("argmax_classes: need [N, K, ...], got " + shape_to_string(s));
  const std::size_t n = s[0], k = s[1];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  std::vector<std::size_t> out(n * inner);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = b * k * inner + i;
      std::size_t best = 0;
      double best_v = logits[base];
      for (std::size_t c = 1; c < k; ++c) {
        const double v = logits[base + c * inner];
        if (v > best_v) {  // strict: lowest index wins ties
          best_v = v;
          best = c;
        }
      }
      out[b * inner + i] = best;
    }
  return out;
}

std::vector<std::size_t> class_indices(const Tensor& labels, std::size_t num_classes) {
  std::vector<std::size_t> out(labels.numel());
  for (std::size_t i = 0; i < labels.numel(); ++i) {
    const double v = labels[i];
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(num_classes)) {
      throw InvalidArgument("target class index " + std::to_string(v) + " out of range [0, " +
                            std::to_string(num_classes) + ")");
    }
    out[i] = static_cast<std::size_t>(v);
  }
  return out;
}

double abs_error(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) throw ShapeError("abs_error: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

double mse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) throw ShapeError("mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

}  // namespace mtr::metrics
