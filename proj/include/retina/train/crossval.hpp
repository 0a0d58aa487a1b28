#pragma once

#include <cstddef>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "retina/data/augment.hpp"
#include "retina/data/folds.hpp"
#include "retina/eval/report.hpp"
#include "retina/train/trainer.hpp"

namespace retina {

/// Supplies the raw image of a manifest sample.
using ImageSource = std::function<ImageBuffer(const Sample&)>;

/// Resize to the trunk's input size and convert to [3, S, S] on [0, 1].
Tensor prepare_image(const ImageBuffer& image, std::size_t size);

/// Gradable samples of `indices`, prepared and standardized with `stats`.
/// Keys are manifest row indices.
Dataset build_dataset(const Manifest& manifest, std::span<const std::size_t> indices, const ImageSource& source,
                      std::size_t size, const ChannelStats& stats);

/// Channel statistics over the gradable samples of `indices`.
ChannelStats dataset_stats(const Manifest& manifest, std::span<const std::size_t> indices, const ImageSource& source,
                           std::size_t size);

struct FoldResult {
  std::size_t fold = 0;
  std::set<std::string> test_centers;
  /// Computed on this fold's training split only.
  ChannelStats stats;
  std::vector<PredictionRow> predictions;
  std::vector<MetricReport> metrics;
};

struct MetricSummary {
  std::string metric;
  double mean = 0.0;
  /// Sample standard deviation across folds; 0 for a single fold.
  double sd = 0.0;
  std::size_t folds = 0;
};

struct CrossvalResult {
  std::vector<FoldResult> folds;
  std::vector<MetricSummary> summary;
};

/// Trains an ensemble on one fold's training centers and predicts its test centers.
FoldResult run_fold(const Manifest& manifest, const FoldPlan& plan, std::size_t fold, const TrainConfig& config,
                    const ImageSource& source, const EvaluationOptions& options);

/// Every fold in turn, then the mean and sd of each metric over the folds where it is defined.
/// Throws ConfigError when a fold has no gradable labeled test sample.
CrossvalResult crossval_run(const Manifest& manifest, const FoldPlan& plan, const TrainConfig& config,
                            const ImageSource& source, const EvaluationOptions& options);

std::vector<MetricSummary> summarize_folds(std::span<const FoldResult> folds);

}  // namespace retina
