// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tensor/tensor.hpp"

namespace mtr::ad {

/// A trainable weight. `grad` is filled by collect_gradients() after a
/// backward pass and consumed (zeroed) by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
};

/// kInputsOnly records parameters as constants, so differentiating with
/// respect to an input never produces weight gradients.
enum class GradMode { kAll, kInputsOnly };

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward() loss w.r.t. this node (zeros if unreached).
  Tensor grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive ops in execution order, which is a topological order of
/// the computation graph. Built fresh for every forward pass.
class Tape {
 public:
  /// Receives the node's own id so it can read its output value.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self, const Tensor& out_grad)>;

  explicit Tape(GradMode mode = GradMode::kAll) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  GradMode mode() const noexcept { return mode_; }

  Var constant(Tensor value);
  Var input(Tensor value);
  Var parameter(const Parameter& param);

  /// Appends an op node. Throws NumericError if `value` is not finite.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  /// Reverse sweep from a single-element `loss`, seeding d(loss)/d(loss) = 1.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  Tensor grad(std::size_t id) const;
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Gradient buffer of node `id`, zero-initialised on first access.
  std::span<double> grad_buffer(std::size_t id);

  /// Sum of gradients over every node that recorded `param`, or nullopt if
  /// the parameter took no part in the last backward().
  std::optional<Tensor> parameter_grad(const Parameter& param) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    std::optional<Tensor> grad;
  };

  Var push(Node node);

  GradMode mode_;
  std::deque<Node> nodes_;
};

/// Adds the tape's parameter gradients into each Parameter::grad.
void collect_gradients(const Tape& tape, std::span<Parameter* const> params);

/// Maps an input Var to a scalar loss Var on the same tape.
using InputLoss = std::function<Var(Tape& tape, const Var& x)>;

struct ValueAndGrad {
  double value = 0.0;
  Tensor grad;
};

/// d(loss)/dx on a fresh kInputsOnly tape; weights are never touched.
ValueAndGrad value_and_grad_wrt_input(const InputLoss& loss, const Tensor& x);
Tensor grad_wrt_input(const InputLoss& loss, const Tensor& x);
/// Forward only.
double evaluate_loss(const InputLoss& loss, const Tensor& x);

}  // namespace mtr::ad
