#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "retina/nn/blocks.hpp"

namespace retina::nn {

inline constexpr std::size_t kNumGrades = 5;

struct TrunkConfig {
  std::size_t in_channels = 3;
  /// Square input side; must be even.
  std::size_t input_size = 8;
  std::size_t stem_channels = 8;
  std::size_t block1_branch = 4;
  std::size_t block1_out = 12;
  std::size_t down_channels = 12;
  std::size_t block2_branch = 4;
  std::size_t block2_out = 12;
  std::size_t attention_channels = 12;
  std::size_t block3_branch = 4;
  std::size_t block3_out = 16;
  bool batch_norm = true;

  std::size_t feature_dim() const { return block3_out; }
  void validate() const;
};

/// stem -> inception -> strided conv -> inception -> partial attention over
/// (stem, first inception) -> factorized inception -> global average pool.
class Trunk : public Module {
 public:
  Trunk() = default;
  Trunk(TrunkConfig config, Rng& rng);

  /// N x C x S x S -> N x feature_dim.
  Var forward(Tape& tape, const Var& x, Mode mode);
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;
  const TrunkConfig& config() const { return config_; }

  Conv2d stem;
  BatchNorm2d stem_bn;
  InceptionBlock block1;
  Conv2d down;
  InceptionBlock block2;
  PartialAttention attention;
  InceptionBlock block3;

 private:
  TrunkConfig config_;
};

struct EncoderOutput {
  Var reconstruction;
  Var logits;
  Var mean;
  Var logvar;
  Var latent;
};

/// Two heads over one trunk: a variational reconstruction head and a
/// five-grade classification head.
class EncoderModel : public Module {
 public:
  EncoderModel() = default;
  EncoderModel(TrunkConfig config, std::size_t latent_dim, Rng& rng);

  /// Train mode samples z = mean + exp(logvar / 2) * eps, with eps for row n
  /// drawn from a stream keyed by (noise_seed, sample_keys[n]); eval mode uses
  /// the mean. logvar is clamped to [-10, 10].
  EncoderOutput forward(Tape& tape, const Var& x, Mode mode, std::uint64_t noise_seed = 0,
                        std::span<const std::uint64_t> sample_keys = {});
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;
  std::size_t latent_dim() const { return latent_dim_; }

  Trunk trunk;
  Linear mean_head;
  Linear logvar_head;
  Linear decoder;
  Linear class_head;

 private:
  std::size_t latent_dim_ = 0;
};

/// Trunk, dropout, and a five-grade linear head.
class Classifier : public Module {
 public:
  Classifier() = default;
  Classifier(TrunkConfig config, Rng& rng, double dropout_rate = 0.2);

  Var forward(Tape& tape, const Var& x, Mode mode, std::uint64_t dropout_seed = 0,
              std::span<const std::uint64_t> sample_keys = {});
  void visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) override;

  Trunk trunk;
  Linear head;
  double dropout_rate = 0.2;
};

/// Per-row KL(N(mean, exp(logvar)) || N(0, I)), averaged over the batch.
Var kl_divergence(const Var& mean, const Var& logvar);

/// Copies the pretrained trunk (parameters and running statistics) into the
/// classifier. Throws ConfigError naming the first mismatching entry.
void transfer_encoder_weights(const EncoderModel& pretrained, Classifier& classifier);

}  // namespace retina::nn
