// SPDX-License-Identifier: Apache-2.0
#include "nn/model.hpp"

#include <cmath>
#include <set>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "tensor/ops.hpp"

namespace mtr::nn {

namespace {

ConvLayer make_conv(const std::string& name, std::size_t cin, std::size_t cout, bool relu, Rng& rng) {
  ConvLayer layer;
  layer.relu = relu;
  layer.weight.name = name + ".weight";
  layer.weight.value = Tensor(Shape{cout, cin, 3, 3});
  layer.bias.name = name + ".bias";
  layer.bias.value = Tensor(Shape{cout}, 0.0);
  std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(cin * 9)));
  for (double& v : layer.weight.value.data()) v = he(rng);
  return layer;
}

ad::Var apply(ad::Tape& tape, const ConvLayer& layer, const ad::Var& x) {
  ad::Var y = ad::bias_add(ad::conv2d(x, tape.parameter(layer.weight)), tape.parameter(layer.bias));
  return layer.relu ? ad::relu(y) : y;
}

void push_params(std::vector<ConvLayer>& layers, std::vector<ad::Parameter*>& out) {
  for (ConvLayer& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

void push_params(const std::vector<ConvLayer>& layers, std::vector<const ad::Parameter*>& out) {
  for (const ConvLayer& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1 || height < 1 || width < 1) throw InvalidArgument("model input shape must be positive");
  if (trunk_width < 1 || trunk_depth < 1) throw InvalidArgument("trunk width and depth must be positive");
  if (head_width < 1) throw InvalidArgument("head width must be positive");
  std::set<std::string> names;
  for (const TaskSpec& t : tasks) {
    t.validate();
    if (!names.insert(t.name).second) throw InvalidArgument("duplicate task '" + t.name + "'");
    if (t.output_shape[1] != height || t.output_shape[2] != width) {
      throw ShapeError("task '" + t.name + "': head output " + shape_to_string(t.output_shape) +
                       " incompatible with trunk output " +
                       shape_to_string(Shape{trunk_width, height, width}));
    }
  }
}

SharedBackboneModel SharedBackboneModel::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SharedBackboneModel m;
  m.config_ = config;
  Rng trunk_rng(derive_seed(seed, "trunk"));
  std::size_t cin = config.in_channels;
  for (std::size_t i = 0; i < config.trunk_depth; ++i) {
    m.trunk_.push_back(make_conv("trunk." + std::to_string(i), cin, config.trunk_width, true, trunk_rng));
    cin = config.trunk_width;
  }
  for (const TaskSpec& t : config.tasks) {
    Rng head_rng(derive_seed(seed, "head." + t.name));
    std::vector<ConvLayer> layers;
    std::size_t c = config.trunk_width;
    for (std::size_t i = 0; i + 1 < t.head_depth; ++i) {
      layers.push_back(make_conv("head." + t.name + "." + std::to_string(i), c, config.head_width, true, head_rng));
      c = config.head_width;
    }
    layers.push_back(
        make_conv("head." + t.name + "." + std::to_string(t.head_depth - 1), c, t.channels(), false, head_rng));
    m.heads_.emplace(t.name, std::move(layers));
  }
  return m;
}

SharedBackboneModel::SharedBackboneModel(ModelConfig config, std::vector<ConvLayer> trunk,
                                         std::map<std::string, std::vector<ConvLayer>, std::less<>> heads)
    : config_(std::move(config)), trunk_(std::move(trunk)), heads_(std::move(heads)) {
  config_.validate();
  if (trunk_.size() != config_.trunk_depth) throw InvalidArgument("trunk layer count does not match config");
  for (const TaskSpec& t : config_.tasks) {
    auto it = heads_.find(t.name);
    if (it == heads_.end()) throw InvalidArgument("task '" + t.name + "' has no head");
    if (it->second.size() != t.head_depth) throw InvalidArgument("head '" + t.name + "' depth mismatch");
  }
  if (heads_.size() != config_.tasks.size()) throw InvalidArgument("head without a task spec");
}

bool SharedBackboneModel::has_task(std::string_view name) const { return heads_.find(name) != heads_.end(); }

const TaskSpec& SharedBackboneModel::task(std::string_view name) const {
  for (const TaskSpec& t : config_.tasks) {
    if (t.name == name) return t;
  }
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

std::vector<std::string> SharedBackboneModel::task_names() const {
  std::vector<std::string> names;
  for (const TaskSpec& t : config_.tasks) names.push_back(t.name);
  return names;
}

ad::Var SharedBackboneModel::features(ad::Tape& tape, const ad::Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != config_.in_channels || s[2] != config_.height || s[3] != config_.width) {
    throw ShapeError("model input " + shape_to_string(s) + " does not match [N, " +
                     std::to_string(config_.in_channels) + ", " + std::to_string(config_.height) + ", " +
                     std::to_string(config_.width) + "]");
  }
  ad::Var h = x;
  for (const ConvLayer& l : trunk_) h = apply(tape, l, h);
  return h;
}

ad::Var SharedBackboneModel::head(ad::Tape& tape, std::string_view task, const ad::Var& features) const {
  ad::Var h = features;
  for (const ConvLayer& l : head_layers(task)) h = apply(tape, l, h);
  return h;
}

ad::Var SharedBackboneModel::forward(ad::Tape& tape, const ad::Var& x, std::string_view task) const {
  return head(tape, task, features(tape, x));
}

const std::vector<ConvLayer>& SharedBackboneModel::head_layers(std::string_view task) const {
  auto it = heads_.find(task);
  if (it == heads_.end()) throw InvalidArgument("unknown task '" + std::string(task) + "'");
  return it->second;
}

std::vector<ad::Parameter*> SharedBackboneModel::parameters() {
  std::vector<ad::Parameter*> out;
  push_params(trunk_, out);
  for (auto& [name, layers] : heads_) push_params(layers, out);
  return out;
}

std::vector<const ad::Parameter*> SharedBackboneModel::parameters() const {
  std::vector<const ad::Parameter*> out;
  push_params(trunk_, out);
  for (const auto& [name, layers] : heads_) push_params(layers, out);
  return out;
}

std::vector<ad::Parameter*> SharedBackboneModel::trunk_parameters() {
  std::vector<ad::Parameter*> out;
  push_params(trunk_, out);
  return out;
}

std::vector<ad::Parameter*> SharedBackboneModel::head_parameters(std::string_view task) {
  auto it = heads_.find(task);
  if (it == heads_.end()) throw InvalidArgument("unknown task '" + std::string(task) + "'");
  std::vector<ad::Parameter*> out;
  push_params(it->second, out);
  return out;
}

std::vector<const ad::Parameter*> SharedBackboneModel::head_parameters(std::string_view task) const {
  std::vector<const ad::Parameter*> out;
  push_params(head_layers(task), out);
  return out;
}

std::size_t SharedBackboneModel::parameter_count() const {
  std::size_t n = 0;
  for (const ad::Parameter* p : parameters()) n += p->value.numel();
  return n;
}

void SharedBackboneModel::zero_grad() {
  for (ad::Parameter* p : parameters()) {
    p->grad = Tensor(p->value.shape(), 0.0);
    p->has_grad = false;
  }
}

Tensor predict(const SharedBackboneModel& model, const Tensor& x, std::string_view task) {
  ad::Tape tape(ad::GradMode::kInputsOnly);
  return model.forward(tape, tape.constant(x), task).value();
}

}  // namespace mtr::nn
