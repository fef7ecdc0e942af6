// SPDX-License-Identifier: Apache-2.0
#include "nn/optimizer.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace mtr::nn {

OptimizerState OptimizerState::from_config(const SgdConfig& config) {
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (!(config.weight_decay >= 0.0)) throw InvalidArgument("weight decay must be nonnegative");
  OptimizerState s;
  s.learning_rate = config.learning_rate;
  s.momentum = config.momentum;
  s.weight_decay = config.weight_decay;
  return s;
}

void OptimizerState::begin_epoch(std::size_t epoch) {
  for (const auto& [at, lr] : schedule) {
    if (at <= epoch) learning_rate = lr;
  }
}

std::vector<std::pair<std::size_t, double>> default_schedule(double learning_rate, std::size_t epochs) {
  const auto drop = static_cast<std::size_t>(0.9 * static_cast<double>(epochs));
  if (drop == 0 || drop >= epochs) return {};
  return {{drop, learning_rate / 10.0}};
}

void sgd_step(std::span<ad::Parameter* const> params, OptimizerState& state) {
  const bool any = std::any_of(params.begin(), params.end(), [](const ad::Parameter* p) { return p->has_grad; });
  if (!any) throw InvalidArgument("sgd_step: no parameter has a gradient (missing backward pass)");
  for (ad::Parameter* p : params) {
    if (!p->has_grad) continue;
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError("gradient shape of '" + p->name + "' does not match its value");
    }
    auto it = state.velocity.find(p->name);
    if (it == state.velocity.end()) it = state.velocity.emplace(p->name, Tensor(p->value.shape(), 0.0)).first;
    auto v = it->second.data();
    auto theta = p->value.data();
    auto g = p->grad.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + state.weight_decay * theta[i];
      theta[i] -= state.learning_rate * v[i];
    }
    p->grad.fill(0.0);
    p->has_grad = false;
  }
}

}  // namespace mtr::nn
