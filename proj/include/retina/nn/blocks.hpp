#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "retina/nn/layers.hpp"

namespace retina::nn {

struct Extent {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

/// Integer stride per axis that maps a source extent onto a target extent.
/// Throws ConfigError when the source is smaller or does not divide evenly.
Extent stride_for_target(Extent source, Extent target);

struct AttentionSource {
  std::size_t channels = 0;
  Extent extent;
};

struct AttentionConfig {
  std::vector<AttentionSource> sources;
  std::size_t target_channels = 0;
  Extent target_extent;
  std::size_t output_channels = 0;
};

/// Attention over lower-block feature maps.
///
/// Each source is reduced to the target's extent and channel count by a
/// strided 3x3 convolution. A learned logit matrix W of shape
/// (target_channels x sources) is softmaxed across sources per channel, the
/// reduced maps are blended with those weights, the blend is concatenated with
/// the target, and a final 3x3 convolution produces the output.
class PartialAttention : public Module {
 public:
  PartialAttention() = default;
  PartialAttention(AttentionConfig config, Rng& rng);

  /// Weighted sum of the reduced sources, shape of the target.
  Var attend(Tape& tape, std::span<const Var> sources);
  Var forward(Tape& tape, std::span<const Var> sources, const Var& target);
  /// Current softmax weights, target_channels x sources.
  Tensor attention_weights() const;

  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;

  const AttentionConfig& config() const { return config_; }
  const std::vector<Extent>& strides() const { return strides_; }

  std::vector<Conv2d> reducers;
  Tensor logits;
  Conv2d output_conv;

 private:
  AttentionConfig config_;
  std::vector<Extent> strides_;
};

struct InceptionConfig {
  std::size_t in_channels = 0;
  std::size_t branch1 = 0;
  std::size_t branch3 = 0;
  std::size_t branch5 = 0;
  std::size_t branch_pool = 0;
  /// Width of the final 3x3 over the concatenation.
  std::size_t anti_alias_channels = 0;
  /// Width of the 1x1 projection on the residual path; must equal anti_alias_channels.
  std::size_t projection_channels = 0;
  bool factorized = false;

  std::size_t concat_channels() const { return branch1 + branch3 + branch5 + branch_pool; }
  void validate() const;
  static InceptionConfig uniform(std::size_t in_channels, std::size_t branch, std::size_t out, bool factorized);
};

/// An n x n convolution or, when factorized, 1 x n followed by n x 1.
class SpatialConv : public Module {
 public:
  SpatialConv() = default;
  SpatialConv(std::size_t in_channels, std::size_t out_channels, std::size_t n, bool factorized, Rng& rng);
  Var forward(Tape& tape, const Var& x);
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;

  std::vector<Conv2d> stages;
};

/// Dense residual inception block.
///
///   b1 = relu(1x1 x)
///   b3 = relu(r + 3x3 r),  r = relu(1x1 x)
///   b5 = relu(r + 5x5 r),  r = relu(1x1 x)
///   bp = relu(1x1 avgpool3(x))
///   y  = 3x3 [b1, b3, b5, bp] + 1x1 x
class InceptionBlock : public Module {
 public:
  InceptionBlock() = default;
  InceptionBlock(InceptionConfig config, Rng& rng);

  Var forward(Tape& tape, const Var& x);
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;
  const InceptionConfig& config() const { return config_; }

  Conv2d branch1;
  Conv2d reduce3;
  SpatialConv conv3;
  Conv2d reduce5;
  SpatialConv conv5;
  Conv2d pool_proj;
  SpatialConv anti_alias;
  Conv2d projection;

 private:
  InceptionConfig config_;
};

}  // namespace retina::nn
