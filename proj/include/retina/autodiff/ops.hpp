#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "retina/autodiff/tape.hpp"

namespace retina {

enum class Mode { train, eval };

namespace ad {

// Elementwise. Binary operands must share a shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
/// Subgradient at 0 is 0.
Var relu(const Var& a);
Var exp(const Var& a);
/// Gradient passes only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);

// Reductions to a rank-0 scalar.
Var sum(const Var& a);
Var mean(const Var& a);

/// (M x K) . (K x N)
Var matmul(const Var& a, const Var& b);

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

/// Output extents floor((H + 2p - K) / s) + 1 per axis. Throws DimensionError.
Shape conv2d_output_shape(const Shape& input, const Shape& kernel, const Conv2dOptions& options);

/// Cross-correlation of NCHW input with an O x I x Kh x Kw kernel, zero padded.
Var conv2d(const Var& input, const Var& kernel, const Conv2dOptions& options);
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding);

/// x[n, c, ...] + bias[c] for NCHW or N x C inputs.
Var add_channel_bias(const Var& x, const Var& bias);

/// Concatenates NCHW tensors along the channel axis.
Var concat_channels(std::span<const Var> parts);

/// Average pooling; padded cells count as zeros in the kernel-area divisor.
Var avg_pool2d(const Var& x, std::size_t kernel, std::size_t stride, std::size_t padding);

/// N x C x H x W -> N x C, mean over the spatial axes.
Var global_avg_pool(const Var& x);

Var reshape(const Var& x, Shape shape);

/// Softmax along the last axis of a rank-2 tensor.
Var softmax_rows(const Var& x);

/// Column j of a rank-2 tensor as a rank-1 tensor.
Var select_column(const Var& x, std::size_t column);

/// x[n, c, h, w] * weights[c].
Var scale_channels(const Var& x, const Var& weights);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

/// Per-channel normalization over batch and spatial axes.
///
/// Train mode normalizes with the biased batch variance plus `epsilon` and
/// updates the running statistics (unbiased variance) with `momentum`; eval
/// mode uses the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, Mode mode,
               double momentum = 0.1, double epsilon = 1e-5);

/// Inverted dropout. Each row along axis 0 draws its mask from its own stream
/// derived from (seed, sample key), so a sample's mask does not depend on its
/// position in the batch. Empty `sample_keys` keys rows by index.
Var dropout(const Var& x, double rate, std::uint64_t seed, Mode mode,
            std::span<const std::uint64_t> sample_keys = {});

/// Per-row cross entropy between softmax(logits) and soft targets; N x K -> N.
Var softmax_cross_entropy(const Var& logits, const Tensor& targets);

/// sum(w_i * v_i) / sum(w_i) over a rank-1 tensor. Throws ConfigError when the weights sum to 0.
Var weighted_mean(const Var& values, std::span<const double> weights);

}  // namespace ad
}  // namespace retina
