#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retina/nn/models.hpp"
#include "retina/train/losses.hpp"
#include "retina/train/optim.hpp"

namespace retina {

struct TrainConfig {
  std::uint64_t seed = 42;
  std::size_t pretrain_epochs = 10;
  std::size_t finetune_epochs = 20;
  std::size_t batch_size = 16;
  LossConfig loss;
  AdamConfig adam;
  NesterovConfig nesterov;
  double max_grad_norm = 5.0;
  double dropout = 0.2;
  std::size_t latent_dim = 32;
  std::size_t ensemble_size = 5;
  /// Initialize each classifier trunk from a pretrained encoder.
  bool transfer = true;
  nn::TrunkConfig trunk;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected with ConfigError.
TrainConfig train_config_from_json(const std::string& text);

struct TrainSample {
  /// [C, S, S], already standardized.
  Tensor image;
  std::optional<Grade> grade;
  Tier tier = Tier::golden;
  /// Stable per-sample key for dropout masks and latent noise.
  std::uint64_t key = 0;
};

using Dataset = std::vector<TrainSample>;

struct Batch {
  Tensor images;
  std::vector<std::optional<Grade>> grades;
  std::vector<Tier> tiers;
  std::vector<std::uint64_t> keys;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);
/// Permutation of [0, n) for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct StepStats {
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double classification = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  /// False when every sample in the batch carried zero weight.
  bool applied = false;
};

/// One Adam step on reconstruction_weight * recon + kl_weight * KL + smoothed
/// cross entropy, each a tier-weighted mean over the batch. Terms whose
/// weight is zero are not evaluated at all.
StepStats pretrain_step(nn::EncoderModel& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                        std::uint64_t step_seed);
/// One Nesterov step on the tier-weighted smoothed cross entropy.
StepStats finetune_step(nn::Classifier& model, Nesterov& optimizer, const Batch& batch, const TrainConfig& config,
                        double lr, std::uint64_t step_seed);

struct EpochLog {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double classification = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Single-line JSON object.
std::string epoch_log_json(const EpochLog& log);

using EpochCallback = std::function<void(const EpochLog&)>;

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size);

EpochLog pretrain_epoch(nn::EncoderModel& model, Adam& optimizer, const Dataset& data, const TrainConfig& config,
                        std::size_t epoch);
/// The learning rate follows poly_lr over finetune_epochs * steps_per_epoch steps.
EpochLog finetune_epoch(nn::Classifier& model, Nesterov& optimizer, const Dataset& data, const TrainConfig& config,
                        std::size_t epoch);

nn::EncoderModel make_encoder(const TrainConfig& config);
nn::Classifier make_classifier(const TrainConfig& config);

/// Throws ConfigError on an empty dataset.
std::vector<EpochLog> pretrain_encoder(const Dataset& data, nn::EncoderModel& model, const TrainConfig& config,
                                       const EpochCallback& on_epoch = {});
std::vector<EpochLog> finetune_classifier(const Dataset& data, nn::Classifier& model, const TrainConfig& config,
                                          const EpochCallback& on_epoch = {});

/// Softmax probabilities in eval mode; N x 5.
Tensor predict_probabilities(nn::Classifier& model, const Tensor& images);
/// Mean of the members' softmax probabilities.
Tensor ensemble_predict(std::span<nn::Classifier* const> models, const Tensor& images);
std::vector<Grade> grades_from_probabilities(const Tensor& probabilities);
/// Fraction of labeled samples whose predicted grade matches.
double labeled_accuracy(nn::Classifier& model, const Dataset& data);

/// Trunk for ensemble member `member`: the base widths with small per-member
/// changes to the inception branch widths. Member 0 is the base.
nn::TrunkConfig member_trunk(const nn::TrunkConfig& base, std::size_t member);
/// Config for ensemble member `member`: its own seed and trunk.
TrainConfig member_config(const TrainConfig& base, std::size_t member);

/// Pretrain (when config.transfer is set), transfer and fine-tune one member.
nn::Classifier train_member(const Dataset& data, const TrainConfig& member, const EpochCallback& on_epoch = {});
std::vector<nn::Classifier> train_ensemble(const Dataset& data, const TrainConfig& config,
                                           const EpochCallback& on_epoch = {});

}  // namespace retina
