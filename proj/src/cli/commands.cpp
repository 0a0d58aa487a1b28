#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "retina/common/digest.hpp"
#include "retina/common/error.hpp"
#include "retina/data/folds.hpp"
#include "retina/enhance/image_io.hpp"
#include "retina/train/crossval.hpp"

namespace retina::cli {

ImageBuffer ManifestSource::load(const Sample& sample) const {
  const fs::path p = fs::path(sample.image_path).is_absolute() ? fs::path(sample.image_path) : base / sample.image_path;
  return read_image(p);
}

ManifestSource open_manifest(const RunConfig& config) {
  if (!config.manifest) throw ConfigError("no manifest given (use --manifest or the config's \"manifest\" key)");
  if (!fs::is_regular_file(*config.manifest)) throw ConfigError("manifest not found: " + config.manifest->string());
  return ManifestSource{load_manifest(*config.manifest), fs::absolute(*config.manifest).parent_path()};
}

FoldPlan resolve_fold_plan(const RunConfig& config, const Manifest& manifest) {
  FoldPlan plan = config.fold_plan ? fold_plan_from_json(read_text(*config.fold_plan))
                                   : make_center_folds(manifest, config.folds);
  const auto violations = fold_violations(manifest, plan);
  if (!violations.empty()) throw ConfigError("fold plan does not fit the manifest: " + violations.front());
  return plan;
}

std::string write_pair_report(const fs::path& dir, std::span<const GradePair> pairs, const EvaluationOptions& options) {
  const auto metrics = evaluate_pairs(pairs, options);
  std::uint64_t positives = 0;
  for (const auto& p : pairs) positives += p.truth >= positivity_threshold(options.rule) ? 1 : 0;
  std::vector<PrevalenceReport> prevalence;
  if (!pairs.empty())
    prevalence.push_back(prevalence_with_ci(positives, pairs.size(), options.level, positivity_name(options.rule)));
  const Report report = render_report(metrics, prevalence);
  const std::string text = report_to_text(report);
  write_text(dir / "report.json", report_to_json(report));
  write_text(dir / "report.txt", text);
  return text;
}

namespace {

void write_config_echo(const fs::path& out, const RunConfig& config, const std::string& command,
                       const ordered_json& extra = {}) {
  ordered_json j = run_config_json(config, command);
  for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(out / "config.json", j.dump(2) + "\n");
}

bool is_image_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

}  // namespace

int cmd_enhance(const EnhanceArgs& args, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(args.input)) {
    err << "enhance: input directory not found: " << args.input.string() << "\n";
    return kExitUsage;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(args.input))
    if (entry.is_regular_file() && is_image_name(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  fs::create_directories(args.out / "images");
  write_config_echo(args.out, args.config, "enhance", {{"input", fs::absolute(args.input).lexically_normal().string()}});
  RunLog log(args.out / "log.jsonl", false, "enhance");

  ordered_json items = ordered_json::array();
  std::size_t failed = 0;
  for (const auto& path : files) {
    const std::string name = path.filename().string();
    ordered_json item{{"file", name}};
    try {
      const auto bytes = read_file_bytes(path);
      const ImageBuffer image = read_image(path);
      const ImageBuffer enhanced = clahe_enhance(image, args.config.clahe);
      const fs::path target = args.out / "images" / name;
      write_image(target, enhanced);
      item["status"] = "ok";
      item["height"] = image.height();
      item["width"] = image.width();
      item["channels"] = image.channels();
      item["input_sha256"] = sha256_hex(bytes);
      item["output_sha256"] = sha256_hex(read_file_bytes(target));
    } catch (const std::exception& e) {
      ++failed;
      item["status"] = "error";
      item["error"] = e.what();
      err << "enhance: " << name << ": " << e.what() << "\n";
    }
    log.write(item);
    items.push_back(std::move(item));
  }
  ordered_json summary{{"count", files.size()},
                       {"processed", files.size() - failed},
                       {"failed", failed},
                       {"clahe",
                        {{"tile_rows", args.config.clahe.tile_rows},
                         {"tile_cols", args.config.clahe.tile_cols},
                         {"clip_limit", args.config.clahe.clip_limit},
                         {"bins", args.config.clahe.bins}}},
                       {"images", items}};
  write_text(args.out / "reports" / "summary.json", summary.dump(2) + "\n");
  out << "enhanced " << files.size() - failed << " of " << files.size() << " images\n";
  return failed == 0 ? kExitOk : kExitItemFailure;
}

int cmd_folds(const FoldsArgs& args, std::ostream& out, std::ostream&) {
  const ManifestSource src = open_manifest(args.config);
  const FoldPlan plan = make_center_folds(src.manifest, args.config.folds);
  const auto violations = fold_violations(src.manifest, plan);
  if (!violations.empty()) throw ConfigError("generated fold plan is invalid: " + violations.front());
  const std::string json = fold_plan_to_json(plan);
  write_config_echo(args.out, args.config, "folds");
  RunLog log(args.out / "log.jsonl", false, "folds");
  write_text(args.out / "folds.json", json);
  log.write({{"event", "folds"}, {"k", plan.folds.size()}, {"samples", src.manifest.samples.size()}});
  out << "wrote " << plan.folds.size() << " folds to " << (args.out / "folds.json").string() << "\n";
  return kExitOk;
}

namespace {

// Rebuilds one fold's ensemble from the ensemble manifest written by `train`.
std::vector<nn::Classifier> load_fold_members(const fs::path& ensemble_path, const ordered_json& fold) {
  std::vector<nn::Classifier> members;
  const fs::path base = fs::absolute(ensemble_path).parent_path();
  for (const auto& m : fold.at("members")) {
    const TrainConfig cfg = train_config_from_json(m.at("config").dump());
    nn::Classifier clf = make_classifier(cfg);
    nn::load_state(clf, nn::load_checkpoint(base / m.at("checkpoint").get<std::string>()), "model");
    members.push_back(std::move(clf));
  }
  if (members.empty()) throw ParseError("ensemble fold has no members");
  return members;
}

}  // namespace

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream&) {
  if (args.predictions.has_value() == args.ensemble.has_value())
    throw ConfigError("evaluate needs exactly one of --predictions or --ensemble");
  std::vector<PredictionRow> rows;
  if (args.predictions) {
    if (!fs::is_regular_file(*args.predictions)) throw ConfigError("predictions not found: " + args.predictions->string());
    rows = load_predictions(*args.predictions);
  } else {
    ordered_json ens;
    try {
      ens = ordered_json::parse(read_text(*args.ensemble));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("ensemble manifest: ") + e.what());
    }
    const ManifestSource src = open_manifest(args.config);
    const auto& folds = ens.at("folds");
    const std::size_t fold = args.fold.value_or(0);
    if (fold >= folds.size()) throw ConfigError("fold " + std::to_string(fold) + " not in the ensemble");
    const ordered_json& f = folds.at(fold);
    const ChannelStats stats = stats_from_json(f.at("stats"));
    std::vector<nn::Classifier> members = load_fold_members(*args.ensemble, f);
    std::vector<nn::Classifier*> ptrs;
    for (auto& m : members) ptrs.push_back(&m);

    // Without --fold every labeled gradable sample is scored; with it only the fold's test centers.
    std::set<std::string> centers;
    if (args.fold)
      for (const auto& c : f.at("test_centers")) centers.insert(c.get<std::string>());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < src.manifest.samples.size(); ++i) {
      const Sample& s = src.manifest.samples[i];
      if (s.gradable && s.grade && (centers.empty() || centers.contains(s.center_id))) idx.push_back(i);
    }
    if (idx.empty()) throw ConfigError("no gradable labeled samples to evaluate");
    const std::size_t size = members.front().trunk.config().input_size;
    const Dataset data = build_dataset(src.manifest, idx, [&](const Sample& s) { return src.load(s); }, size, stats);
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto predicted = grades_from_probabilities(ensemble_predict(ptrs, make_batch(data, all).images));
    for (std::size_t i = 0; i < data.size(); ++i)
      rows.push_back({src.manifest.samples[data[i].key].patient_id, *data[i].grade, predicted[i]});
    write_text(args.out / "reports" / "predictions.csv", serialize_predictions(rows));
  }
  write_config_echo(args.out, args.config, "evaluate");
  RunLog log(args.out / "log.jsonl", false, "evaluate");
  const auto pairs = patient_pairs(rows);
  const std::string text = write_pair_report(args.out / "reports", pairs, args.config.evaluation);
  log.write({{"event", "evaluate"}, {"rows", rows.size()}, {"patients", pairs.size()},
             {"positivity", positivity_name(args.config.evaluation.rule)}});
  out << text;
  return kExitOk;
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream&) {
  const fs::path summary_path = args.run / "reports" / "crossval.json";
  if (!fs::is_regular_file(summary_path)) throw ConfigError("not a finished train run: missing " + summary_path.string());
  ordered_json summary;
  try {
    summary = ordered_json::parse(read_text(summary_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("crossval summary: ") + e.what());
  }
  std::vector<PredictionRow> pooled;
  for (std::size_t f = 0; f < summary.at("folds").size(); ++f) {
    const auto rows = load_predictions(args.run / "reports" / ("fold" + std::to_string(f)) / "predictions.csv");
    pooled.insert(pooled.end(), rows.begin(), rows.end());
  }
  const fs::path& dest = args.out;
  write_config_echo(dest, args.config, "report", {{"run", fs::absolute(args.run).lexically_normal().string()}});
  RunLog log(dest / "log.jsonl", false, "report");
  const auto pairs = patient_pairs(pooled);
  const std::string text = write_pair_report(dest / "reports" / "pooled", pairs, args.config.evaluation);

  std::ostringstream table;
  table << "pooled over " << summary.at("folds").size() << " folds (" << pairs.size() << " patients)\n" << text;
  table << "\nper-fold mean +/- sd\n";
  for (const auto& m : summary.at("summary")) {
    char line[128];
    std::snprintf(line, sizeof line, "%-22s %6.1f +/- %5.1f  (%zu folds)\n", m.at("metric").get<std::string>().c_str(),
                  round_pct(m.at("mean").get<double>()), round_pct(m.at("sd").get<double>()),
                  m.at("folds").get<std::size_t>());
    table << line;
  }
  write_text(dest / "reports" / "summary.txt", table.str());
  log.write({{"event", "report"}, {"patients", pairs.size()}});
  out << table.str();
  return kExitOk;
}

}  // namespace retina::cli
