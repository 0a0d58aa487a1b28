#include "retina/train/crossval.hpp"

#include <cmath>
#include <map>

#include "retina/common/error.hpp"

namespace retina {

Tensor prepare_image(const ImageBuffer& image, std::size_t size) {
  if (image.height() == size && image.width() == size) return image_to_tensor(image);
  return image_to_tensor(resize_bilinear(image, size, size));
}

ChannelStats dataset_stats(const Manifest& manifest, std::span<const std::size_t> indices, const ImageSource& source,
                           std::size_t size) {
  std::vector<Tensor> tensors;
  for (std::size_t i : indices) {
    const Sample& s = manifest.samples.at(i);
    if (s.gradable) tensors.push_back(prepare_image(source(s), size));
  }
  if (tensors.empty()) throw ConfigError("dataset_stats: no gradable samples");
  return channel_stats(tensors);
}

Dataset build_dataset(const Manifest& manifest, std::span<const std::size_t> indices, const ImageSource& source,
                      std::size_t size, const ChannelStats& stats) {
  Dataset out;
  for (std::size_t i : indices) {
    const Sample& s = manifest.samples.at(i);
    if (!s.gradable) continue;
    TrainSample t;
    t.image = standardize(prepare_image(source(s), size), stats.mean, stats.std);
    t.grade = s.grade;
    t.tier = s.tier;
    t.key = i;
    out.push_back(std::move(t));
  }
  return out;
}

FoldResult run_fold(const Manifest& manifest, const FoldPlan& plan, std::size_t fold, const TrainConfig& config,
                    const ImageSource& source, const EvaluationOptions& options) {
  const Fold& f = plan.folds.at(fold);
  const FoldSplit split = split_fold(manifest, f);
  const std::size_t size = config.trunk.input_size;

  FoldResult result;
  result.fold = fold;
  result.test_centers = f.test_centers;
  result.stats = dataset_stats(manifest, split.train, source, size);
  const Dataset train = build_dataset(manifest, split.train, source, size, result.stats);
  Dataset test = build_dataset(manifest, split.test, source, size, result.stats);
  std::erase_if(test, [](const TrainSample& s) { return !s.grade; });
  if (test.empty()) throw ConfigError("fold " + std::to_string(fold) + " has no gradable labeled test sample");

  TrainConfig fold_config = config;
  fold_config.seed = derive_seed(config.seed, "fold-" + std::to_string(fold));
  std::vector<nn::Classifier> members = train_ensemble(train, fold_config);
  std::vector<nn::Classifier*> ptrs;
  for (auto& m : members) ptrs.push_back(&m);

  std::vector<std::size_t> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch batch = make_batch(test, all);
  const auto predicted = grades_from_probabilities(ensemble_predict(ptrs, batch.images));
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Sample& s = manifest.samples.at(test[i].key);
    result.predictions.push_back({s.patient_id, *test[i].grade, predicted[i]});
  }
  const auto pairs = patient_pairs(result.predictions);
  EvaluationOptions fold_options = options;
  fold_options.seed = derive_seed(options.seed, "fold-" + std::to_string(fold));
  result.metrics = evaluate_pairs(pairs, fold_options);
  return result;
}

std::vector<MetricSummary> summarize_folds(std::span<const FoldResult> folds) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
  for (const auto& f : folds)
    for (const auto& m : f.metrics) {
      if (!values.contains(m.metric)) order.push_back(m.metric);
      values[m.metric].push_back(m.value);
    }
  std::vector<MetricSummary> out;
  for (const auto& name : order) {
    const auto& v = values[name];
    MetricSummary s;
    s.metric = name;
    s.folds = v.size();
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out.push_back(s);
  }
  return out;
}

CrossvalResult crossval_run(const Manifest& manifest, const FoldPlan& plan, const TrainConfig& config,
                            const ImageSource& source, const EvaluationOptions& options) {
  config.validate();
  if (plan.folds.empty()) throw ConfigError("crossval_run: fold plan has no folds");
  const auto violations = fold_violations(manifest, plan);
  if (!violations.empty()) throw ConfigError("crossval_run: invalid fold plan: " + violations.front());
  CrossvalResult result;
  for (std::size_t f = 0; f < plan.folds.size(); ++f)
    result.folds.push_back(run_fold(manifest, plan, f, config, source, options));
  result.summary = summarize_folds(result.folds);
  return result;
}

}  // namespace retina
