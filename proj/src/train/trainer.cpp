#include "retina/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "retina/common/error.hpp"

namespace retina {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (ensemble_size == 0) throw ConfigError("ensemble_size must be at least 1");
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(adam.lr > 0.0) || !(nesterov.lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(nesterov.momentum >= 0.0 && nesterov.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(nesterov.power >= 0.0)) throw ConfigError("decay power must be non-negative");
  loss.validate();
  trunk.validate();
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("make_batch: empty batch");
  const Shape& one = data.at(indices[0]).image.shape();
  if (one.size() != 3) throw DimensionError("training images must be [C, H, W]");
  const std::size_t per = shape_size(one);
  Batch b;
  b.images = Tensor(Shape{indices.size(), one[0], one[1], one[2]});
  auto out = b.images.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const TrainSample& s = data.at(indices[r]);
    if (s.image.shape() != one) throw DimensionError("training images differ in shape");
    const std::span<const double> src = s.image.data();
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(r * per));
    b.grades.push_back(s.grade);
    b.tiers.push_back(s.tier);
    b.keys.push_back(s.key);
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

namespace {

struct ClassTargets {
  Tensor targets;
  std::vector<double> weights;
  double weight_sum = 0.0;
};

// Unlabeled rows get a uniform target and zero weight.
ClassTargets class_targets(const Batch& batch, const LossConfig& loss) {
  ClassTargets t;
  const std::size_t n = batch.grades.size();
  t.targets = Tensor(Shape{n, static_cast<std::size_t>(kGradeCount)}, 1.0 / kGradeCount);
  for (std::size_t r = 0; r < n; ++r) {
    double w = 0.0;
    if (batch.grades[r]) {
      const Grade g = *batch.grades[r];
      const Tensor row = smoothed_targets(std::span<const Grade>(&g, 1), loss.smoothing_epsilon);
      const std::span<const double> src = row.data();
      std::copy(src.begin(), src.end(), t.targets.data().begin() + static_cast<std::ptrdiff_t>(r * kGradeCount));
      w = loss.weight(batch.tiers[r]);
    }
    t.weights.push_back(w);
    t.weight_sum += w;
  }
  return t;
}

double apply_norm(std::span<const nn::NamedTensor> params, double max_norm) { return grad_normalize(params, max_norm); }

std::uint64_t phase_seed(std::uint64_t seed, const char* phase) { return derive_seed(seed, std::string_view(phase)); }

}  // namespace

StepStats pretrain_step(nn::EncoderModel& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                        std::uint64_t step_seed) {
  StepStats stats;
  stats.lr = optimizer.config().lr;
  const LossConfig& lc = config.loss;
  const std::vector<double> w = tier_weights(batch.tiers, lc);
  double wsum = 0.0;
  for (double x : w) wsum += x;
  const ClassTargets ct = class_targets(batch, lc);
  const bool use_recon = lc.reconstruction_weight > 0.0 && wsum > 0.0;
  const bool use_kl = lc.kl_weight > 0.0 && wsum > 0.0;
  const bool use_class = ct.weight_sum > 0.0;
  if (!use_recon && !use_kl && !use_class) return stats;

  Tape tape;
  const Var x = tape.constant(batch.images);
  const nn::EncoderOutput out = model.forward(tape, x, Mode::train, step_seed, batch.keys);
  std::vector<Var> terms;
  if (use_recon) {
    const Var r = ad::weighted_mean(per_sample_mse(out.reconstruction, batch.images), w);
    stats.reconstruction = r.value().item();
    terms.push_back(ad::scale(r, lc.reconstruction_weight));
  }
  if (use_kl) {
    const Var k = ad::weighted_mean(per_sample_kl(out.mean, out.logvar), w);
    stats.kl = k.value().item();
    terms.push_back(ad::scale(k, lc.kl_weight));
  }
  if (use_class) {
    const Var c = ad::weighted_mean(ad::softmax_cross_entropy(out.logits, ct.targets), ct.weights);
    stats.classification = c.value().item();
    terms.push_back(c);
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  stats.loss = total.value().item();

  model.zero_grad();
  tape.backward(total);
  const auto params = model.parameters();
  stats.grad_norm = apply_norm(params, config.max_grad_norm);
  optimizer.step(params);
  stats.applied = true;
  return stats;
}

StepStats finetune_step(nn::Classifier& model, Nesterov& optimizer, const Batch& batch, const TrainConfig& config,
                        double lr, std::uint64_t step_seed) {
  StepStats stats;
  stats.lr = lr;
  const ClassTargets ct = class_targets(batch, config.loss);
  if (ct.weight_sum <= 0.0) return stats;

  Tape tape;
  const Var logits = model.forward(tape, tape.constant(batch.images), Mode::train, step_seed, batch.keys);
  const Var loss = ad::weighted_mean(ad::softmax_cross_entropy(logits, ct.targets), ct.weights);
  stats.loss = stats.classification = loss.value().item();

  model.zero_grad();
  tape.backward(loss);
  const auto params = model.parameters();
  stats.grad_norm = apply_norm(params, config.max_grad_norm);
  optimizer.step(params, lr);
  stats.applied = true;
  return stats;
}

std::string epoch_log_json(const EpochLog& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\"phase\":\"" << log.phase << "\",\"epoch\":" << log.epoch << ",\"steps\":" << log.steps
     << ",\"loss\":" << log.loss << ",\"reconstruction\":" << log.reconstruction << ",\"kl\":" << log.kl
     << ",\"classification\":" << log.classification << ",\"lr\":" << log.lr << ",\"grad_norm\":" << log.grad_norm
     << "}";
  return os.str();
}

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
  return (samples + batch_size - 1) / batch_size;
}

namespace {

// Averages the applied steps of one epoch.
template <typename StepFn>
EpochLog run_epoch(const char* phase, const Dataset& data, const TrainConfig& config, std::size_t epoch,
                   StepFn&& step) {
  if (data.empty()) throw ConfigError(std::string(phase) + ": empty dataset");
  const auto order = epoch_order(data.size(), derive_seed(phase_seed(config.seed, phase), "shuffle"), epoch);
  EpochLog log;
  log.phase = phase;
  log.epoch = epoch;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    const Batch batch = make_batch(data, std::span<const std::size_t>(order).subspan(start, end - start));
    const StepStats s = step(batch);
    if (!s.applied) continue;
    ++log.steps;
    log.loss += s.loss;
    log.reconstruction += s.reconstruction;
    log.kl += s.kl;
    log.classification += s.classification;
    log.grad_norm += s.grad_norm;
    log.lr = s.lr;
  }
  if (log.steps > 0) {
    const double n = static_cast<double>(log.steps);
    log.loss /= n;
    log.reconstruction /= n;
    log.kl /= n;
    log.classification /= n;
    log.grad_norm /= n;
  }
  return log;
}

}  // namespace

EpochLog pretrain_epoch(nn::EncoderModel& model, Adam& optimizer, const Dataset& data, const TrainConfig& config,
                        std::size_t epoch) {
  const std::uint64_t base = derive_seed(phase_seed(config.seed, "pretrain"), "noise");
  return run_epoch("pretrain", data, config, epoch, [&](const Batch& batch) {
    return pretrain_step(model, optimizer, batch, config, derive_seed(base, optimizer.steps()));
  });
}

EpochLog finetune_epoch(nn::Classifier& model, Nesterov& optimizer, const Dataset& data, const TrainConfig& config,
                        std::size_t epoch) {
  const std::uint64_t base = derive_seed(phase_seed(config.seed, "finetune"), "dropout");
  const std::uint64_t horizon =
      std::max<std::uint64_t>(1, config.finetune_epochs * steps_per_epoch(data.size(), config.batch_size));
  return run_epoch("finetune", data, config, epoch, [&](const Batch& batch) {
    const std::uint64_t t = std::min(optimizer.steps(), horizon);
    const double lr = poly_lr(t, horizon, config.nesterov.lr, config.nesterov.power);
    return finetune_step(model, optimizer, batch, config, lr, derive_seed(base, optimizer.steps()));
  });
}

nn::EncoderModel make_encoder(const TrainConfig& config) {
  Rng rng(derive_seed(config.seed, "encoder-init"));
  return nn::EncoderModel(config.trunk, config.latent_dim, rng);
}

nn::Classifier make_classifier(const TrainConfig& config) {
  Rng rng(derive_seed(config.seed, "classifier-init"));
  return nn::Classifier(config.trunk, rng, config.dropout);
}

std::vector<EpochLog> pretrain_encoder(const Dataset& data, nn::EncoderModel& model, const TrainConfig& config,
                                       const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw ConfigError("pretrain_encoder: empty dataset");
  Adam optimizer(config.adam);
  std::vector<EpochLog> logs;
  for (std::size_t e = 0; e < config.pretrain_epochs; ++e) {
    logs.push_back(pretrain_epoch(model, optimizer, data, config, e));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

std::vector<EpochLog> finetune_classifier(const Dataset& data, nn::Classifier& model, const TrainConfig& config,
                                          const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw ConfigError("finetune_classifier: empty dataset");
  Nesterov optimizer(config.nesterov);
  std::vector<EpochLog> logs;
  for (std::size_t e = 0; e < config.finetune_epochs; ++e) {
    logs.push_back(finetune_epoch(model, optimizer, data, config, e));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

Tensor predict_probabilities(nn::Classifier& model, const Tensor& images) {
  if (images.rank() != 4) throw DimensionError("predict_probabilities expects [N, C, H, W]");
  const std::size_t n = images.dim(0);
  const std::size_t per = n == 0 ? 0 : images.size() / n;
  Tensor out(Shape{n, nn::kNumGrades});
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Tensor part(Shape{m, images.dim(1), images.dim(2), images.dim(3)});
    const std::span<const double> src = images.data().subspan(start * per, m * per);
    std::copy(src.begin(), src.end(), part.data().begin());
    Tape tape;
    const Var probs = ad::softmax_rows(model.forward(tape, tape.constant(std::move(part)), Mode::eval));
    const Tensor& p = probs.value();
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * nn::kNumGrades));
  }
  return out;
}

Tensor ensemble_predict(std::span<nn::Classifier* const> models, const Tensor& images) {
  if (models.empty()) throw ConfigError("ensemble_predict: no models");
  Tensor sum = predict_probabilities(*models[0], images);
  for (std::size_t i = 1; i < models.size(); ++i) {
    const Tensor p = predict_probabilities(*models[i], images);
    if (p.shape() != sum.shape()) throw DimensionError("ensemble members disagree on output arity");
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += p[j];
  }
  const double k = static_cast<double>(models.size());
  for (double& v : sum.data()) v /= k;
  return sum;
}

std::vector<Grade> grades_from_probabilities(const Tensor& probabilities) {
  if (probabilities.rank() != 2) throw DimensionError("grades_from_probabilities expects N x K");
  const std::size_t k = probabilities.dim(1);
  std::vector<Grade> out;
  for (std::size_t r = 0; r < probabilities.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (probabilities[r * k + c] >= probabilities[r * k + best]) best = c;
    out.push_back(static_cast<Grade>(best));
  }
  return out;
}

double labeled_accuracy(nn::Classifier& model, const Dataset& data) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].grade) idx.push_back(i);
  if (idx.empty()) throw ConfigError("labeled_accuracy: no labeled samples");
  const Batch b = make_batch(data, idx);
  const auto pred = grades_from_probabilities(predict_probabilities(model, b.images));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) hit += pred[i] == *b.grades[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

nn::TrunkConfig member_trunk(const nn::TrunkConfig& base, std::size_t member) {
  nn::TrunkConfig t = base;
  // Offsets to the three inception branch widths; each further lap of five widens every branch by one.
  static constexpr int kOffsets[][3] = {{0, 0, 0}, {1, 0, 1}, {0, 1, 0}, {1, 1, 1}, {2, 0, 2}};
  const auto& o = kOffsets[member % 5];
  const std::size_t lap = member / 5;
  t.block1_branch = base.block1_branch + static_cast<std::size_t>(o[0]) + lap;
  t.block2_branch = base.block2_branch + static_cast<std::size_t>(o[1]) + lap;
  t.block3_branch = base.block3_branch + static_cast<std::size_t>(o[2]) + lap;
  return t;
}

TrainConfig member_config(const TrainConfig& base, std::size_t member) {
  TrainConfig c = base;
  c.seed = member == 0 ? base.seed : derive_seed(base.seed, static_cast<std::uint64_t>(member));
  c.trunk = member_trunk(base.trunk, member);
  return c;
}

nn::Classifier train_member(const Dataset& data, const TrainConfig& member, const EpochCallback& on_epoch) {
  nn::Classifier classifier = make_classifier(member);
  if (member.transfer) {
    nn::EncoderModel encoder = make_encoder(member);
    pretrain_encoder(data, encoder, member, on_epoch);
    nn::transfer_encoder_weights(encoder, classifier);
  }
  finetune_classifier(data, classifier, member, on_epoch);
  return classifier;
}

std::vector<nn::Classifier> train_ensemble(const Dataset& data, const TrainConfig& config,
                                           const EpochCallback& on_epoch) {
  config.validate();
  std::vector<nn::Classifier> members;
  for (std::size_t m = 0; m < config.ensemble_size; ++m) members.push_back(train_member(data, member_config(config, m), on_epoch));
  return members;
}

}  // namespace retina
