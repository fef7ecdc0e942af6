// SPDX-License-Identifier: Apache-2.0
#include "tensor/tape.hpp"

#include "common/error.hpp"

namespace mtr::ad {

Tape& Var::tape() const {
  if (!tape_) throw InvalidArgument("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

Tensor Var::grad() const { return tape().grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!all_finite(value.data())) throw NumericError("constant: non-finite value");
  return push(Node{"constant", std::move(value), {}, {}, false, nullptr, std::nullopt});
}

Var Tape::input(Tensor value) {
  if (!all_finite(value.data())) throw NumericError("input: non-finite value");
  return push(Node{"input", std::move(value), {}, {}, true, nullptr, std::nullopt});
}

Var Tape::parameter(const Parameter& param) {
  if (mode_ == GradMode::kInputsOnly) {
    return push(Node{"parameter", param.value, {}, {}, false, nullptr, std::nullopt});
  }
  return push(Node{"parameter", param.value, {}, {}, true, &param, std::nullopt});
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (!all_finite(value.data())) {
    throw NumericError(std::string(op) + ": non-finite output");
  }
  bool needs = false;
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw InvalidArgument(std::string(op) + ": parent not on this tape");
    needs = needs || nodes_[p].requires_grad;
  }
  Node node{std::string(op), std::move(value), std::move(parents), {}, needs, nullptr, std::nullopt};
  if (needs) node.backward = std::move(backward);
  return push(std::move(node));
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.grad) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad->data();
}

Tensor Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad) return *n.grad;
  return Tensor(n.value.shape(), 0.0);
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw InvalidArgument("backward: loss belongs to another tape");
  const std::size_t root = loss.id();
  if (nodes_.at(root).value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_to_string(nodes_[root].value.shape()));
  }
  for (Node& n : nodes_) n.grad.reset();
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad || !n.requires_grad) continue;
    if (!all_finite(n.grad->data())) {
      throw NumericError("backward: non-finite gradient at " + n.op + " (node " + std::to_string(i) + ")");
    }
    if (n.backward) {
      // Copy: the callback may touch other nodes' buffers but never this one.
      const Tensor g = *n.grad;
      n.backward(*this, i, g);
    }
  }
}

std::optional<Tensor> Tape::parameter_grad(const Parameter& param) const {
  std::optional<Tensor> total;
  for (const Node& n : nodes_) {
    if (n.param != &param || !n.grad) continue;
    if (!total) {
      total = *n.grad;
    } else {
      auto dst = total->data();
      auto src = n.grad->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return total;
}

void collect_gradients(const Tape& tape, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    auto g = tape.parameter_grad(*p);
    if (!g) continue;
    if (!p->has_grad || p->grad.shape() != p->value.shape()) {
      p->grad = std::move(*g);
    } else {
      auto dst = p->grad.data();
      auto src = g->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    p->has_grad = true;
  }
}

ValueAndGrad value_and_grad_wrt_input(const InputLoss& loss, const Tensor& x) {
  Tape tape(GradMode::kInputsOnly);
  Var xv = tape.input(x);
  Var l = loss(tape, xv);
  if (l.value().numel() != 1) {
    throw ShapeError("grad_wrt_input: loss must be scalar, got shape " + shape_to_string(l.shape()));
  }
  tape.backward(l);
  return ValueAndGrad{l.value()[0], xv.grad()};
}

Tensor grad_wrt_input(const InputLoss& loss, const Tensor& x) { return value_and_grad_wrt_input(loss, x).grad; }

double evaluate_loss(const InputLoss& loss, const Tensor& x) {
  Tape tape(GradMode::kInputsOnly);
  Var l = loss(tape, tape.constant(x));
  if (l.value().numel() != 1) throw ShapeError("evaluate_loss: loss must be scalar");
  return l.value()[0];
}

}  // namespace mtr::ad
