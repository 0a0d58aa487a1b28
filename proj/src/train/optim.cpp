#include "retina/train/optim.hpp"

#include <cmath>
#include <utility>

#include "retina/common/error.hpp"

namespace retina {
namespace {

void ensure_buffers(std::vector<Tensor>& buffers, std::span<const nn::NamedTensor> params, const char* who) {
  if (buffers.empty()) {
    for (const auto& p : params) buffers.emplace_back(p.tensor->shape(), 0.0);
    return;
  }
  if (buffers.size() != params.size()) throw DimensionError(std::string(who) + ": parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (buffers[i].shape() != params[i].tensor->shape())
      throw DimensionError(std::string(who) + ": shape of " + params[i].name + " changed between steps");
}

void save_buffers(nn::Checkpoint& cp, const std::string& prefix, const std::string& kind,
                  const std::vector<Tensor>& buffers) {
  for (std::size_t i = 0; i < buffers.size(); ++i)
    cp.tensors.emplace_back(prefix + "." + kind + "." + std::to_string(i), buffers[i]);
}

std::vector<Tensor> load_buffers(const nn::Checkpoint& cp, const std::string& prefix, const std::string& kind,
                                 std::span<const nn::NamedTensor> params) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = prefix + "." + kind + "." + std::to_string(i);
    if (!cp.contains(name)) throw ParseError("optimizer state is missing " + name);
    const Tensor& t = cp.at(name);
    if (t.shape() != params[i].tensor->shape()) throw ParseError("optimizer state " + name + " has the wrong shape");
    out.push_back(t);
  }
  return out;
}

std::uint64_t load_steps(const nn::Checkpoint& cp, const std::string& prefix) {
  const std::string name = prefix + ".steps";
  if (!cp.contains(name)) throw ParseError("optimizer state is missing " + name);
  return static_cast<std::uint64_t>(cp.at(name).item());
}

}  // namespace

void Adam::step(std::span<const nn::NamedTensor> params) {
  ensure_buffers(m_, params, "Adam");
  ensure_buffers(v_, params, "Adam");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    const std::span<const double> g = p.grad();
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void Adam::save(nn::Checkpoint& cp, const std::string& prefix) const {
  cp.tensors.emplace_back(prefix + ".steps", Tensor::scalar(static_cast<double>(steps_)));
  save_buffers(cp, prefix, "m", m_);
  save_buffers(cp, prefix, "v", v_);
}

void Adam::load(const nn::Checkpoint& cp, const std::string& prefix, std::span<const nn::NamedTensor> params) {
  steps_ = load_steps(cp, prefix);
  if (steps_ == 0) {
    m_.clear();
    v_.clear();
    return;
  }
  m_ = load_buffers(cp, prefix, "m", params);
  v_ = load_buffers(cp, prefix, "v", params);
}

void Nesterov::step(std::span<const nn::NamedTensor> params, double lr) {
  ensure_buffers(velocity_, params, "Nesterov");
  ++steps_;
  const double mu = config_.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    const std::span<const double> g = p.grad();
    auto v = velocity_[i].data();
    auto w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = mu * v[j] + g[j];
      w[j] -= lr * (g[j] + mu * v[j]);
    }
  }
}

void Nesterov::save(nn::Checkpoint& cp, const std::string& prefix) const {
  cp.tensors.emplace_back(prefix + ".steps", Tensor::scalar(static_cast<double>(steps_)));
  save_buffers(cp, prefix, "velocity", velocity_);
}

void Nesterov::load(const nn::Checkpoint& cp, const std::string& prefix, std::span<const nn::NamedTensor> params) {
  steps_ = load_steps(cp, prefix);
  velocity_.clear();
  if (steps_ > 0) velocity_ = load_buffers(cp, prefix, "velocity", params);
}

double poly_lr(std::uint64_t t, std::uint64_t total, double lr0, double power) {
  if (total == 0) throw ConfigError("poly_lr: total steps must be positive");
  if (t > total) throw ConfigError("poly_lr: step beyond the schedule horizon");
  return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

double global_grad_norm(std::span<const nn::NamedTensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    const std::span<const double> g = std::as_const(*p.tensor).grad();
    for (double x : g) sq += x * x;
  }
  return std::sqrt(sq);
}

double grad_normalize(std::span<const nn::NamedTensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("grad_normalize: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params)
      for (double& x : p.tensor->grad()) x *= factor;
  }
  return norm;
}

}  // namespace retina
