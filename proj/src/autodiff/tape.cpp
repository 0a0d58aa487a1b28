#include "retina/autodiff/tape.hpp"

#include <algorithm>

#include "retina/common/error.hpp"

namespace retina {

const Tensor& Var::value() const { return tape_->value_of(id_); }

Tensor Var::grad() const { return tape_->grad_tensor(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::bind(Tensor& parameter) {
  // The tape keeps its own copy of the value so later in-place edits of the
  // parameter cannot change what backward sees.
  nodes_.push_back(Node{parameter, {}, nullptr, &parameter, parameter.requires_grad(), {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [&](std::size_t i) { return nodes_[i].needs_grad; });
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr,
                        nullptr, needs, {}});
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_of(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty() && node.value.size() > 0) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Tensor Tape::grad_tensor(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor(node.value.shape(), node.grad);
}

void Tape::backward(const Var& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward() without a seed needs a single-element root, got " +
                         shape_string(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void Tape::backward(const Var& root, const Tensor& seed) {
  if (root.tape_ != this) throw std::logic_error("variable belongs to another tape");
  if (seed.shape() != root.shape()) {
    throw DimensionError("backward seed " + shape_string(seed.shape()) + " does not match root " +
                         shape_string(root.shape()));
  }
  for (Node& node : nodes_) node.grad.clear();
  auto root_grad = grad_of(root.id());
  std::copy(seed.data().begin(), seed.data().end(), root_grad.begin());

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.needs_grad) continue;
    if (node.backward) node.backward(*this, i);
    if (node.parameter != nullptr && node.parameter->requires_grad()) {
      auto dst = node.parameter->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    }
  }
}

}  // namespace retina
