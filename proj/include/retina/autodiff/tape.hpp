#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "retina/autodiff/tensor.hpp"

namespace retina {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient from the last backward pass, shaped like the value (zeros if unreached).
  Tensor grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of one forward pass.
///
/// Nodes are stored in creation order, which is a valid topological order;
/// backward walks them once in reverse. A tape is single threaded and is
/// meant to be rebuilt for every forward pass.
class Tape {
 public:
  /// Receives the node id being differentiated; reads its output gradient via
  /// grad_of(self) and accumulates into grad_of(input) for each input.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Tape-owned leaf that receives a gradient (inspect with Var::grad()).
  Var variable(Tensor value);
  /// Leaf aliasing an external parameter. After backward, the gradient is
  /// added into parameter.grad() when parameter.requires_grad() is set.
  Var bind(Tensor& parameter);

  /// Seeds a single-element root with 1 and propagates.
  void backward(const Var& root);
  /// Seeds the root with an explicit upstream gradient.
  void backward(const Var& root, const Tensor& seed);

  std::size_t size() const { return nodes_.size(); }

  // Interface for operation implementations.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  std::span<double> grad_of(std::size_t id);
  Tensor grad_tensor(std::size_t id) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* parameter = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
  };

  // deque keeps references to earlier values stable while recording.
  std::deque<Node> nodes_;
};

}  // namespace retina
