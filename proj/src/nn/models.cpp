#include "retina/nn/models.hpp"

#include <utility>

#include "retina/common/error.hpp"

namespace retina::nn {

void TrunkConfig::validate() const {
  if (input_size < 2 || input_size % 2 != 0) throw ConfigError("trunk input_size must be even and at least 2");
  if (in_channels == 0 || stem_channels == 0 || down_channels == 0 || attention_channels == 0)
    throw ConfigError("trunk widths must be positive");
}

Trunk::Trunk(TrunkConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t s = config_.input_size;
  stem = Conv2d::square(config_.in_channels, config_.stem_channels, 3, 1, rng);
  stem_bn = BatchNorm2d(config_.stem_channels);
  block1 = InceptionBlock(InceptionConfig::uniform(config_.stem_channels, config_.block1_branch, config_.block1_out,
                                                   false),
                          rng);
  down = Conv2d::square(config_.block1_out, config_.down_channels, 3, 2, rng);
  block2 = InceptionBlock(InceptionConfig::uniform(config_.down_channels, config_.block2_branch, config_.block2_out,
                                                   false),
                          rng);
  AttentionConfig att;
  att.sources = {{config_.stem_channels, {s, s}}, {config_.block1_out, {s, s}}};
  att.target_channels = config_.block2_out;
  att.target_extent = {s / 2, s / 2};
  att.output_channels = config_.attention_channels;
  attention = PartialAttention(att, rng);
  block3 = InceptionBlock(InceptionConfig::uniform(config_.attention_channels, config_.block3_branch,
                                                   config_.block3_out, true),
                          rng);
}

Var Trunk::forward(Tape& tape, const Var& x, Mode mode) {
  const Shape& shape = x.shape();
  if (shape.size() != 4 || shape[1] != config_.in_channels || shape[2] != config_.input_size ||
      shape[3] != config_.input_size)
    throw DimensionError("trunk expects N x " + std::to_string(config_.in_channels) + " x " +
                         std::to_string(config_.input_size) + " x " + std::to_string(config_.input_size) +
                         " input, got " + shape_string(shape));
  Var s0 = stem.forward(tape, x);
  if (config_.batch_norm) s0 = stem_bn.forward(tape, s0, mode);
  s0 = ad::relu(s0);
  const Var e1 = ad::relu(block1.forward(tape, s0));
  const Var e2 = ad::relu(block2.forward(tape, ad::relu(down.forward(tape, e1))));
  const Var sources[] = {s0, e1};
  const Var a = ad::relu(attention.forward(tape, sources, e2));
  return ad::global_avg_pool(ad::relu(block3.forward(tape, a)));
}

void Trunk::visit(const std::string& prefix, std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) {
  stem.visit(join(prefix, "stem"), params, buffers);
  if (config_.batch_norm) stem_bn.visit(join(prefix, "stem_bn"), params, buffers);
  block1.visit(join(prefix, "block1"), params, buffers);
  down.visit(join(prefix, "down"), params, buffers);
  block2.visit(join(prefix, "block2"), params, buffers);
  attention.visit(join(prefix, "attention"), params, buffers);
  block3.visit(join(prefix, "block3"), params, buffers);
}

EncoderModel::EncoderModel(TrunkConfig config, std::size_t latent_dim, Rng& rng)
    : trunk(config, rng), latent_dim_(latent_dim) {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  const std::size_t f = config.feature_dim();
  mean_head = Linear(f, latent_dim, rng);
  logvar_head = Linear(f, latent_dim, rng, 0.1);
  decoder = Linear(latent_dim, config.in_channels * config.input_size * config.input_size, rng);
  class_head = Linear(f, kNumGrades, rng);
}

EncoderOutput EncoderModel::forward(Tape& tape, const Var& x, Mode mode, std::uint64_t noise_seed,
                                    std::span<const std::uint64_t> sample_keys) {
  const std::size_t n = x.shape()[0];
  if (!sample_keys.empty() && sample_keys.size() != n)
    throw DimensionError("encoder: one sample key per row required");
  const Var features = trunk.forward(tape, x, mode);
  EncoderOutput out;
  out.mean = mean_head.forward(tape, features);
  out.logvar = ad::clamp(logvar_head.forward(tape, features), -10.0, 10.0);
  if (mode == Mode::train) {
    Tensor eps(Shape{n, latent_dim_});
    for (std::size_t r = 0; r < n; ++r) {
      Rng rng(derive_seed(noise_seed, sample_keys.empty() ? r : sample_keys[r]));
      for (std::size_t j = 0; j < latent_dim_; ++j) eps[r * latent_dim_ + j] = rng.normal();
    }
    out.latent = ad::add(out.mean, ad::mul(ad::exp(ad::scale(out.logvar, 0.5)), tape.constant(std::move(eps))));
  } else {
    out.latent = out.mean;
  }
  out.reconstruction = ad::reshape(decoder.forward(tape, out.latent), x.shape());
  out.logits = class_head.forward(tape, features);
  return out;
}

void EncoderModel::visit(const std::string& prefix, std::vector<NamedTensor>& params,
                         std::vector<NamedTensor>& buffers) {
  trunk.visit(join(prefix, "trunk"), params, buffers);
  mean_head.visit(join(prefix, "mean_head"), params, buffers);
  logvar_head.visit(join(prefix, "logvar_head"), params, buffers);
  decoder.visit(join(prefix, "decoder"), params, buffers);
  class_head.visit(join(prefix, "class_head"), params, buffers);
}

Classifier::Classifier(TrunkConfig config, Rng& rng, double rate)
    : trunk(config, rng), head(config.feature_dim(), kNumGrades, rng), dropout_rate(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

Var Classifier::forward(Tape& tape, const Var& x, Mode mode, std::uint64_t dropout_seed,
                        std::span<const std::uint64_t> sample_keys) {
  const Var features = trunk.forward(tape, x, mode);
  return head.forward(tape, ad::dropout(features, dropout_rate, dropout_seed, mode, sample_keys));
}

void Classifier::visit(const std::string& prefix, std::vector<NamedTensor>& params,
                       std::vector<NamedTensor>& buffers) {
  trunk.visit(join(prefix, "trunk"), params, buffers);
  head.visit(join(prefix, "head"), params, buffers);
}

Var kl_divergence(const Var& mean, const Var& logvar) {
  const double rows = static_cast<double>(mean.shape().at(0));
  const Var inner = ad::add_scalar(ad::sub(ad::sub(logvar, ad::mul(mean, mean)), ad::exp(logvar)), 1.0);
  return ad::scale(ad::sum(inner), -0.5 / rows);
}

void transfer_encoder_weights(const EncoderModel& pretrained, Classifier& classifier) {
  const auto source = pretrained.trunk.state();
  const auto dest = std::as_const(classifier.trunk).state();
  const std::size_t common = std::min(source.size(), dest.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (source[i].name != dest[i].name)
      throw ConfigError("trunk mismatch at entry " + std::to_string(i) + ": pretrained has '" + source[i].name +
                        "', classifier has '" + dest[i].name + "'");
    if (source[i].tensor->shape() != dest[i].tensor->shape())
      throw ConfigError("trunk mismatch at '" + source[i].name + "': pretrained shape " +
                        shape_string(source[i].tensor->shape()) + ", classifier shape " +
                        shape_string(dest[i].tensor->shape()));
  }
  if (source.size() != dest.size()) {
    const auto& extra = source.size() > dest.size() ? source[common] : dest[common];
    throw ConfigError("trunk mismatch: '" + extra.name + "' exists only in the " +
                      (source.size() > dest.size() ? "pretrained" : "classifier") + " trunk");
  }
  auto writable = classifier.trunk.state();
  for (std::size_t i = 0; i < source.size(); ++i) {
    Tensor& t = *writable[i].tensor;
    const auto src = source[i].tensor->data();
    std::copy(src.begin(), src.end(), t.data().begin());
  }
}

}  // namespace retina::nn
