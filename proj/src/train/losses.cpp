#include "retina/train/losses.hpp"

#include <cmath>

#include "retina/common/error.hpp"

namespace retina {

void LossConfig::validate() const {
  if (!(smoothing_epsilon >= 0.0 && smoothing_epsilon < 1.0)) throw ConfigError("smoothing_epsilon must lie in [0, 1)");
  if (!(golden_weight > 0.0)) throw ConfigError("golden_weight must be positive");
  if (!(tfl_weight >= 0.0)) throw ConfigError("tfl_weight must be non-negative");
  if (golden_weight < tfl_weight) throw ConfigError("golden_weight must be at least tfl_weight");
  if (!(reconstruction_weight >= 0.0) || !(kl_weight >= 0.0))
    throw ConfigError("reconstruction and KL weights must be non-negative");
}

Var mse_loss(const Var& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw DimensionError("mse_loss: " + shape_string(pred.shape()) + " vs " + shape_string(truth.shape()));
  const Var diff = ad::sub(pred, pred.tape().constant(truth));
  return ad::mean(ad::mul(diff, diff));
}

Var row_sums(const Var& x) {
  const std::size_t n = x.shape().at(0);
  const std::size_t d = n == 0 ? 0 : x.value().size() / n;
  const Var flat = ad::reshape(x, {n, d});
  return ad::reshape(ad::matmul(flat, x.tape().constant(Tensor({d, 1}, 1.0))), {n});
}

Var per_sample_mse(const Var& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw DimensionError("per_sample_mse: " + shape_string(pred.shape()) + " vs " + shape_string(truth.shape()));
  const Var diff = ad::sub(pred, pred.tape().constant(truth));
  const double per_row = static_cast<double>(truth.size() / truth.dim(0));
  return ad::scale(row_sums(ad::mul(diff, diff)), 1.0 / per_row);
}

Var per_sample_kl(const Var& mean, const Var& logvar) {
  const Var inner = ad::add_scalar(ad::sub(ad::sub(logvar, ad::mul(mean, mean)), ad::exp(logvar)), 1.0);
  return ad::scale(row_sums(inner), -0.5);
}

std::vector<double> smooth_labels(std::span<const double> one_hot, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("label smoothing epsilon must lie in [0, 1)");
  std::size_t hot = 0, ones = 0;
  for (std::size_t i = 0; i < one_hot.size(); ++i) {
    if (one_hot[i] == 1.0) {
      hot = i;
      ++ones;
    } else if (one_hot[i] != 0.0) {
      throw ConfigError("smooth_labels: input is not one-hot");
    }
  }
  if (ones != 1) throw ConfigError("smooth_labels: input is not one-hot");
  const double k = static_cast<double>(one_hot.size());
  std::vector<double> out(one_hot.size(), epsilon / k);
  out[hot] = 1.0 - epsilon + epsilon / k;
  return out;
}

Tensor smoothed_targets(std::span<const Grade> grades, double epsilon) {
  Tensor out(Shape{grades.size(), static_cast<std::size_t>(kGradeCount)});
  std::vector<double> one_hot(kGradeCount);
  for (std::size_t r = 0; r < grades.size(); ++r) {
    if (grades[r] < 0 || grades[r] >= kGradeCount) throw ConfigError("grade out of range");
    std::fill(one_hot.begin(), one_hot.end(), 0.0);
    one_hot[static_cast<std::size_t>(grades[r])] = 1.0;
    const auto row = smooth_labels(one_hot, epsilon);
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * kGradeCount));
  }
  return out;
}

std::vector<double> tier_weights(std::span<const Tier> tiers, const LossConfig& config) {
  std::vector<double> w;
  w.reserve(tiers.size());
  for (Tier t : tiers) w.push_back(config.weight(t));
  return w;
}

Var weighted_batch_loss(const Var& per_sample, std::span<const Tier> tiers, const LossConfig& config) {
  if (per_sample.shape() != Shape{tiers.size()}) throw DimensionError("weighted_batch_loss: one tier per sample");
  const auto w = tier_weights(tiers, config);
  return ad::weighted_mean(per_sample, w);
}

double weighted_batch_loss(std::span<const double> per_sample, std::span<const Tier> tiers, const LossConfig& config) {
  if (per_sample.size() != tiers.size()) throw DimensionError("weighted_batch_loss: one tier per sample");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    const double w = config.weight(tiers[i]);
    num += w * per_sample[i];
    den += w;
  }
  if (den == 0.0) throw ConfigError("weighted_batch_loss: weights sum to zero");
  return num / den;
}

}  // namespace retina
