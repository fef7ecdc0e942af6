// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nn/task.hpp"
#include "tensor/tape.hpp"

namespace mtr::nn {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t trunk_width = 8;
  std::size_t trunk_depth = 2;
  std::size_t head_width = 8;
  std::vector<TaskSpec> tasks;

  void validate() const;
};

/// 3x3 convolution + bias, optionally followed by relu.
struct ConvLayer {
  ad::Parameter weight;  // [Cout, Cin, 3, 3]
  ad::Parameter bias;    // [Cout]
  bool relu = true;
};

/// Trunk F shared by every task, plus one decoder head D_c per task.
///
/// The trunk is `trunk_depth` conv+relu layers. Each head is
/// `head_depth - 1` conv+relu layers of `head_width` channels followed by a
/// linear conv to the task's channel count. Heads share no parameters.
class SharedBackboneModel {
 public:
  /// He-normal weights, zero biases. The trunk and each head draw from their
  /// own seed streams keyed by name, so a head's initial weights do not
  /// depend on which other tasks are present.
  static SharedBackboneModel build(const ModelConfig& config, std::uint64_t seed);

  /// Rebuilds from stored layers (checkpoint loading).
  SharedBackboneModel(ModelConfig config, std::vector<ConvLayer> trunk,
                      std::map<std::string, std::vector<ConvLayer>, std::less<>> heads);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<TaskSpec>& tasks() const noexcept { return config_.tasks; }
  bool has_task(std::string_view name) const;
  const TaskSpec& task(std::string_view name) const;
  std::vector<std::string> task_names() const;

  /// x: [N, in_channels, H, W] -> features [N, trunk_width, H, W].
  ad::Var features(ad::Tape& tape, const ad::Var& x) const;
  /// Head output [N, C, H, W] for one task.
  ad::Var head(ad::Tape& tape, std::string_view task, const ad::Var& features) const;
  ad::Var forward(ad::Tape& tape, const ad::Var& x, std::string_view task) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::vector<ad::Parameter*> trunk_parameters();
  std::vector<ad::Parameter*> head_parameters(std::string_view task);
  std::vector<const ad::Parameter*> head_parameters(std::string_view task) const;
  std::size_t parameter_count() const;

  void zero_grad();

  const std::vector<ConvLayer>& trunk_layers() const noexcept { return trunk_; }
  const std::vector<ConvLayer>& head_layers(std::string_view task) const;

 private:
  SharedBackboneModel() = default;

  ModelConfig config_;
  std::vector<ConvLayer> trunk_;
  std::map<std::string, std::vector<ConvLayer>, std::less<>> heads_;
};

/// Convenience: full trunk+head forward on a fresh inputs-only tape.
Tensor predict(const SharedBackboneModel& model, const Tensor& x, std::string_view task);

}  // namespace mtr::nn
