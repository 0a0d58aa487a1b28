#pragma once

#include <cstddef>

#include "retina/autodiff/ops.hpp"
#include "retina/common/rng.hpp"
#include "retina/nn/module.hpp"

namespace retina::nn {

/// Convolution with bias. Weights start He-normal, bias at zero.
class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
         ad::Conv2dOptions options, Rng& rng);
  /// Square kernel, "same" padding for odd sizes.
  static Conv2d square(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                       Rng& rng);

  Var forward(Tape& tape, const Var& x);
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;

  Tensor weight;
  Tensor bias;
  ad::Conv2dOptions options;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Var forward(Tape& tape, const Var& x, Mode mode);
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;

  Tensor gamma;
  Tensor beta;
  ad::BatchNormStats stats;
};

/// y = x W + b for x of shape N x in.
class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng, double init_scale = 1.0);

  Var forward(Tape& tape, const Var& x);
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;

  Tensor weight;
  Tensor bias;
};

}  // namespace retina::nn
