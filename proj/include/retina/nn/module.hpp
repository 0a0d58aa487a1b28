#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "retina/autodiff/tensor.hpp"

namespace retina::nn {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

/// Anything that owns named parameters (trained) and buffers (running
/// statistics). Names are dotted paths and are stable across copies.
class Module {
 public:
  virtual ~Module() = default;

  virtual void visit(const std::string& prefix, std::vector<NamedTensor>& params,
                     std::vector<NamedTensor>& buffers) = 0;

  std::vector<NamedTensor> parameters();
  std::vector<NamedTensor> buffers();
  /// Parameters followed by buffers.
  std::vector<NamedTensor> state();
  std::vector<ConstNamedTensor> state() const;
  std::size_t parameter_count() const;
  void zero_grad();

 protected:
  static std::string join(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
  }
};

}  // namespace retina::nn
