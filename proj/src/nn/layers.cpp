#include "retina/nn/layers.hpp"

#include <cmath>

#include "retina/common/error.hpp"

namespace retina::nn {

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
               ad::Conv2dOptions opts, Rng& rng)
    : weight(Tensor::randn({out_channels, in_channels, kernel_h, kernel_w}, rng,
                           std::sqrt(2.0 / static_cast<double>(in_channels * kernel_h * kernel_w)))),
      bias(Shape{out_channels}, 0.0),
      options(opts) {
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0)
    throw ConfigError("Conv2d: extents must be positive");
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Conv2d Conv2d::square(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                      Rng& rng) {
  const std::size_t pad = (kernel - 1) / 2;
  return Conv2d(in_channels, out_channels, kernel, kernel, {stride, stride, pad, pad}, rng);
}

Var Conv2d::forward(Tape& tape, const Var& x) {
  return ad::add_channel_bias(ad::conv2d(x, tape.bind(weight), options), tape.bind(bias));
}

void Conv2d::visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>&) {
  params.push_back({join(prefix, "weight"), &weight});
  params.push_back({join(prefix, "bias"), &bias});
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Shape{channels}, 1.0), beta(Shape{channels}, 0.0), stats(channels) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

Var BatchNorm2d::forward(Tape& tape, const Var& x, Mode mode) {
  return ad::batch_norm(x, tape.bind(gamma), tape.bind(beta), stats, mode);
}

void BatchNorm2d::visit(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
  params.push_back({join(prefix, "gamma"), &gamma});
  params.push_back({join(prefix, "beta"), &beta});
  buffers.push_back({join(prefix, "running_mean"), &stats.running_mean});
  buffers.push_back({join(prefix, "running_var"), &stats.running_var});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng, double init_scale)
    : weight(Tensor::randn({in_features, out_features}, rng, init_scale / std::sqrt(static_cast<double>(in_features)))),
      bias(Shape{out_features}, 0.0) {
  if (in_features == 0 || out_features == 0) throw ConfigError("Linear: extents must be positive");
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

Var Linear::forward(Tape& tape, const Var& x) {
  return ad::add_channel_bias(ad::matmul(x, tape.bind(weight)), tape.bind(bias));
}

void Linear::visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>&) {
  params.push_back({join(prefix, "weight"), &weight});
  params.push_back({join(prefix, "bias"), &bias});
}

}  // namespace retina::nn
