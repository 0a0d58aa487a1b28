#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retina/nn/checkpoint.hpp"

namespace retina {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moment buffers mirror the parameter list given to
/// the first step; later calls must pass the same list in the same order.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<const nn::NamedTensor> params);
  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  void save(nn::Checkpoint& checkpoint, const std::string& prefix) const;
  void load(const nn::Checkpoint& checkpoint, const std::string& prefix, std::span<const nn::NamedTensor> params);

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct NesterovConfig {
  double lr = 1e-2;
  double momentum = 0.9;
  double power = 1.0;
};

/// Nesterov momentum in the v <- mu v + g, p <- p - lr (g + mu v) form.
class Nesterov {
 public:
  explicit Nesterov(NesterovConfig config = {}) : config_(config) {}

  void step(std::span<const nn::NamedTensor> params, double lr);
  std::uint64_t steps() const { return steps_; }
  const NesterovConfig& config() const { return config_; }
  const std::vector<Tensor>& velocities() const { return velocity_; }

  void save(nn::Checkpoint& checkpoint, const std::string& prefix) const;
  void load(const nn::Checkpoint& checkpoint, const std::string& prefix, std::span<const nn::NamedTensor> params);

 private:
  NesterovConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> velocity_;
};

/// lr0 * (1 - t / total)^power for 0 <= t <= total.
double poly_lr(std::uint64_t t, std::uint64_t total, double lr0, double power);

double global_grad_norm(std::span<const nn::NamedTensor> params);
/// Rescales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before rescaling.
double grad_normalize(std::span<const nn::NamedTensor> params, double max_norm);

}  // namespace retina
