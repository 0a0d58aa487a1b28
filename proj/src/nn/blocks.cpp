#include "retina/nn/blocks.hpp"

#include <cmath>
#include <string>

#include "retina/common/error.hpp"

namespace retina::nn {
namespace {

std::string extent_string(Extent e) { return std::to_string(e.height) + "x" + std::to_string(e.width); }

Extent spatial(const Var& v) {
  if (v.shape().size() != 4) throw DimensionError("expected NCHW tensor, got " + shape_string(v.shape()));
  return {v.shape()[2], v.shape()[3]};
}

}  // namespace

Extent stride_for_target(Extent source, Extent target) {
  if (target.height == 0 || target.width == 0) throw ConfigError("attention target extent is empty");
  if (source.height < target.height || source.width < target.width)
    throw ConfigError("attention source " + extent_string(source) + " is smaller than target " +
                      extent_string(target));
  if (source.height % target.height != 0 || source.width % target.width != 0)
    throw ConfigError("attention source " + extent_string(source) + " is not an integer multiple of target " +
                      extent_string(target));
  return {source.height / target.height, source.width / target.width};
}

PartialAttention::PartialAttention(AttentionConfig config, Rng& rng) : config_(std::move(config)) {
  if (config_.sources.empty()) throw ConfigError("partial attention needs at least one source");
  if (config_.target_channels == 0 || config_.output_channels == 0)
    throw ConfigError("partial attention channel counts must be positive");
  for (const AttentionSource& s : config_.sources) {
    const Extent st = stride_for_target(s.extent, config_.target_extent);
    strides_.push_back(st);
    reducers.emplace_back(s.channels, config_.target_channels, 3, 3, ad::Conv2dOptions{st.height, st.width, 1, 1},
                          rng);
  }
  logits = Tensor(Shape{config_.target_channels, config_.sources.size()}, 0.0);
  logits.set_requires_grad(true);
  output_conv = Conv2d::square(2 * config_.target_channels, config_.output_channels, 3, 1, rng);
}

Var PartialAttention::attend(Tape& tape, std::span<const Var> sources) {
  if (sources.size() != reducers.size())
    throw ConfigError("partial attention expects " + std::to_string(reducers.size()) + " sources, got " +
                      std::to_string(sources.size()));
  const Var weights = ad::softmax_rows(tape.bind(logits));
  Var blend;
  for (std::size_t j = 0; j < sources.size(); ++j) {
    const Extent e = spatial(sources[j]);
    if (!(stride_for_target(e, config_.target_extent) == strides_[j]) || sources[j].shape()[1] != config_.sources[j].channels)
      throw ConfigError("partial attention source " + std::to_string(j) + " has shape " +
                        shape_string(sources[j].shape()) + ", configured for " +
                        std::to_string(config_.sources[j].channels) + " channels at " +
                        extent_string(config_.sources[j].extent));
    const Var term = ad::scale_channels(reducers[j].forward(tape, sources[j]), ad::select_column(weights, j));
    blend = j == 0 ? term : ad::add(blend, term);
  }
  return blend;
}

Var PartialAttention::forward(Tape& tape, std::span<const Var> sources, const Var& target) {
  if (!(spatial(target) == config_.target_extent) || target.shape()[1] != config_.target_channels)
    throw ConfigError("partial attention target has shape " + shape_string(target.shape()));
  const Var parts[] = {attend(tape, sources), target};
  return output_conv.forward(tape, ad::concat_channels(parts));
}

Tensor PartialAttention::attention_weights() const {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double peak = logits[r * cols];
    for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, logits[r * cols + c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += out[r * cols + c] = std::exp(logits[r * cols + c] - peak);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  return out;
}

void PartialAttention::visit(const std::string& prefix, std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>& buffers) {
  for (std::size_t j = 0; j < reducers.size(); ++j)
    reducers[j].visit(join(prefix, "reduce" + std::to_string(j)), params, buffers);
  params.push_back({join(prefix, "logits"), &logits});
  output_conv.visit(join(prefix, "output"), params, buffers);
}

void InceptionConfig::validate() const {
  if (in_channels == 0 || branch1 == 0 || branch3 == 0 || branch5 == 0 || branch_pool == 0 ||
      anti_alias_channels == 0 || projection_channels == 0)
    throw ConfigError("inception widths must all be at least 1");
  if (anti_alias_channels != projection_channels)
    throw ConfigError("inception residual join: anti-alias width " + std::to_string(anti_alias_channels) +
                      " differs from projection width " + std::to_string(projection_channels));
}

InceptionConfig InceptionConfig::uniform(std::size_t in_channels, std::size_t branch, std::size_t out,
                                         bool factorized) {
  return {in_channels, branch, branch, branch, branch, out, out, factorized};
}

SpatialConv::SpatialConv(std::size_t in_channels, std::size_t out_channels, std::size_t n, bool factorized,
                         Rng& rng) {
  const std::size_t pad = (n - 1) / 2;
  if (factorized && n > 1) {
    stages.emplace_back(in_channels, out_channels, 1, n, ad::Conv2dOptions{1, 1, 0, pad}, rng);
    stages.emplace_back(out_channels, out_channels, n, 1, ad::Conv2dOptions{1, 1, pad, 0}, rng);
  } else {
    stages.emplace_back(in_channels, out_channels, n, n, ad::Conv2dOptions{1, 1, pad, pad}, rng);
  }
}

Var SpatialConv::forward(Tape& tape, const Var& x) {
  Var y = x;
  for (Conv2d& c : stages) y = c.forward(tape, y);
  return y;
}

void SpatialConv::visit(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
  if (stages.size() == 1) {
    stages[0].visit(prefix, params, buffers);
    return;
  }
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].visit(join(prefix, std::to_string(i)), params, buffers);
}

InceptionBlock::InceptionBlock(InceptionConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t in = config_.in_channels;
  const bool f = config_.factorized;
  branch1 = Conv2d::square(in, config_.branch1, 1, 1, rng);
  reduce3 = Conv2d::square(in, config_.branch3, 1, 1, rng);
  conv3 = SpatialConv(config_.branch3, config_.branch3, 3, f, rng);
  reduce5 = Conv2d::square(in, config_.branch5, 1, 1, rng);
  conv5 = SpatialConv(config_.branch5, config_.branch5, 5, f, rng);
  pool_proj = Conv2d::square(in, config_.branch_pool, 1, 1, rng);
  anti_alias = SpatialConv(config_.concat_channels(), config_.anti_alias_channels, 3, f, rng);
  projection = Conv2d::square(in, config_.projection_channels, 1, 1, rng);
}

Var InceptionBlock::forward(Tape& tape, const Var& x) {
  if (x.shape().size() != 4 || x.shape()[1] != config_.in_channels)
    throw ConfigError("inception block expects " + std::to_string(config_.in_channels) + " input channels, got " +
                      shape_string(x.shape()));
  const Var r3 = ad::relu(reduce3.forward(tape, x));
  const Var r5 = ad::relu(reduce5.forward(tape, x));
  const Var parts[] = {
      ad::relu(branch1.forward(tape, x)),
      ad::relu(ad::add(r3, conv3.forward(tape, r3))),
      ad::relu(ad::add(r5, conv5.forward(tape, r5))),
      ad::relu(pool_proj.forward(tape, ad::avg_pool2d(x, 3, 1, 1))),
  };
  return ad::add(anti_alias.forward(tape, ad::concat_channels(parts)), projection.forward(tape, x));
}

void InceptionBlock::visit(const std::string& prefix, std::vector<NamedTensor>& params,
                           std::vector<NamedTensor>& buffers) {
  branch1.visit(join(prefix, "branch1"), params, buffers);
  reduce3.visit(join(prefix, "reduce3"), params, buffers);
  conv3.visit(join(prefix, "conv3"), params, buffers);
  reduce5.visit(join(prefix, "reduce5"), params, buffers);
  conv5.visit(join(prefix, "conv5"), params, buffers);
  pool_proj.visit(join(prefix, "pool_proj"), params, buffers);
  anti_alias.visit(join(prefix, "anti_alias"), params, buffers);
  projection.visit(join(prefix, "projection"), params, buffers);
}

}  // namespace retina::nn
