#pragma once

#include <span>
#include <vector>

#include "retina/autodiff/ops.hpp"
#include "retina/data/manifest.hpp"

namespace retina {

struct LossConfig {
  double smoothing_epsilon = 0.1;
  double golden_weight = 1.0;
  double tfl_weight = 0.2;
  double reconstruction_weight = 1.0;
  double kl_weight = 1.0;

  void validate() const;
  double weight(Tier tier) const { return tier == Tier::golden ? golden_weight : tfl_weight; }
};

/// Mean squared error over every element.
Var mse_loss(const Var& pred, const Tensor& truth);
/// Mean squared error per row (axis 0); N.
Var per_sample_mse(const Var& pred, const Tensor& truth);
/// KL(N(mean, exp(logvar)) || N(0, I)) per row; N.
Var per_sample_kl(const Var& mean, const Var& logvar);
/// Sum over all axes but the first; N.
Var row_sums(const Var& x);

/// Hot entry 1 - eps + eps/K, others eps/K. Throws ConfigError unless the
/// input is one-hot and 0 <= eps < 1.
std::vector<double> smooth_labels(std::span<const double> one_hot, double epsilon);
/// N x 5 smoothed targets for integer grades.
Tensor smoothed_targets(std::span<const Grade> grades, double epsilon);

std::vector<double> tier_weights(std::span<const Tier> tiers, const LossConfig& config);
/// sum(w_i * loss_i) / sum(w_i) with w_i the tier weight. ConfigError when the weights sum to 0.
Var weighted_batch_loss(const Var& per_sample, std::span<const Tier> tiers, const LossConfig& config);
double weighted_batch_loss(std::span<const double> per_sample, std::span<const Tier> tiers, const LossConfig& config);

}  // namespace retina
