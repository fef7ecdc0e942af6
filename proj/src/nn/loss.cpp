// SPDX-License-Identifier: Apache-2.0
#include "nn/loss.hpp"

#include "common/error.hpp"
#include "metrics/metrics.hpp"
#include "tensor/ops.hpp"

namespace mtr::nn {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kPixelCrossEntropy:
      return "pixel-cross-entropy";
    case LossKind::kL1:
      return "l1";
    case LossKind::kMse:
      return "mse";
  }
  return "?";
}

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "pixel-cross-entropy" || name == "cross-entropy") return LossKind::kPixelCrossEntropy;
  if (name == "l1") return LossKind::kL1;
  if (name == "mse") return LossKind::kMse;
  throw InvalidArgument("unknown loss kind '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (name.empty()) throw InvalidArgument("task name must not be empty");
  if (!(weight >= 0.0)) throw InvalidArgument("task '" + name + "': weight must be nonnegative");
  if (output_shape.size() != 3) throw InvalidArgument("task '" + name + "': output shape must be {C, H, W}");
  for (std::size_t d : output_shape) {
    if (d == 0) throw InvalidArgument("task '" + name + "': output shape has a zero dimension");
  }
  if (loss == LossKind::kPixelCrossEntropy && output_shape[0] < 2) {
    throw InvalidArgument("task '" + name + "': cross-entropy needs at least 2 classes");
  }
  if (loss != LossKind::kPixelCrossEntropy && output_shape[0] != 1) {
    throw InvalidArgument("task '" + name + "': regression heads have one channel");
  }
  if (head_depth < 1) throw InvalidArgument("task '" + name + "': head depth must be positive");
}

TaskSpec toy_task_spec(std::string_view name, std::size_t height, std::size_t width, std::size_t num_classes,
                       double weight, std::size_t head_depth) {
  TaskSpec t;
  t.name = std::string(name);
  t.weight = weight;
  t.head_depth = head_depth;
  if (name == "seg") {
    t.loss = LossKind::kPixelCrossEntropy;
    t.output_shape = {num_classes, height, width};
  } else if (name == "depth") {
    t.loss = LossKind::kL1;
    t.output_shape = {1, height, width};
  } else if (name == "edge" || name == "keypoint" || name == "recon") {
    t.loss = LossKind::kMse;
    t.output_shape = {1, height, width};
  } else {
    throw InvalidArgument("unknown toy task '" + std::string(name) + "'");
  }
  return t;
}

void validate_target(const Tensor& target, const TaskSpec& spec, std::size_t batch) {
  const Shape expected{batch, spec.output_shape[1], spec.output_shape[2]};
  if (target.shape() != expected) {
    throw ShapeError("task '" + spec.name + "': target shape " + shape_to_string(target.shape()) + ", expected " +
                     shape_to_string(expected));
  }
  if (spec.loss == LossKind::kPixelCrossEntropy) (void)metrics::class_indices(target, spec.channels());
}

ad::Var per_pixel_loss(const ad::Var& pred, const Tensor& target, const TaskSpec& spec) {
  const Shape& ps = pred.shape();
  if (ps.size() != 4 || ps[1] != spec.output_shape[0] || ps[2] != spec.output_shape[1] ||
      ps[3] != spec.output_shape[2]) {
    throw ShapeError("task '" + spec.name + "': prediction shape " + shape_to_string(ps) + " does not match head");
  }
  const std::size_t n = ps[0];
  validate_target(target, spec, n);
  ad::Tape& tape = pred.tape();
  switch (spec.loss) {
    case LossKind::kPixelCrossEntropy: {
      const auto idx = metrics::class_indices(target, spec.channels());
      return ad::scale(ad::pick(ad::log_softmax(pred, 1), 1, idx), -1.0);
    }
    case LossKind::kL1:
      return ad::abs(ad::reshape(pred, target.shape()) - tape.constant(target));
    case LossKind::kMse:
      return ad::square(ad::reshape(pred, target.shape()) - tape.constant(target));
  }
  throw InvalidArgument("unsupported loss kind");
}

ad::Var pixel_mean_loss(const ad::Var& pred, const Tensor& target, const TaskSpec& spec) {
  return ad::mean(per_pixel_loss(pred, target, spec));
}

}  // namespace mtr::nn
