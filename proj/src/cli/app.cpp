#include "retina/cli/app.hpp"

#include <CLI11.hpp>

#include "commands.hpp"
#include "retina/common/error.hpp"

namespace retina::cli {
namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
  std::string fold_plan;
  std::optional<std::size_t> folds;
  std::string positivity;
  std::optional<double> clip;
  std::string tiles;
  std::optional<std::uint64_t> resamples;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_out = true) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed (default 42)");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
}

std::pair<std::size_t, std::size_t> parse_tiles(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw ConfigError("--tiles expects RxC, e.g. 8x8");
  try {
    std::size_t used = 0;
    const unsigned long r = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("rows");
    const std::string cs = text.substr(x + 1);
    const unsigned long c = std::stoul(cs, &used);
    if (used != cs.size()) throw std::invalid_argument("cols");
    return {r, c};
  } catch (const std::logic_error&) {
    throw ConfigError("--tiles expects RxC, e.g. 8x8");
  }
}

// Config file first, then flags on top of it.
RunConfig resolve(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.train.seed = *o.seed;
  c.evaluation.seed = c.train.seed;
  if (!o.manifest.empty()) c.manifest = fs::absolute(o.manifest);
  if (!o.fold_plan.empty()) c.fold_plan = fs::absolute(o.fold_plan);
  if (o.folds) c.folds = *o.folds;
  if (!o.positivity.empty()) c.evaluation.rule = parse_positivity(o.positivity);
  if (o.clip) c.clahe.clip_limit = *o.clip;
  if (!o.tiles.empty()) std::tie(c.clahe.tile_rows, c.clahe.tile_cols) = parse_tiles(o.tiles);
  if (o.resamples) c.evaluation.n_resamples = *o.resamples;
  return c;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diabetic-retinopathy screening pipeline at desk scale", "retina_screen"};
  app.require_subcommand(1);
  CommonOptions o;
  std::string input;
  bool resume = false;
  std::optional<std::size_t> halt_after;
  std::string pretrained, predictions, ensemble, run_dir;
  std::optional<std::size_t> fold;

  auto* enhance = app.add_subcommand("enhance", "Apply CLAHE to every image in a directory");
  add_common(enhance, o);
  enhance->add_option("--input", input, "Directory of PNG/PGM/PPM images")->required();
  enhance->add_option("--clip", o.clip, "Clip limit as a multiple of the uniform bin height");
  enhance->add_option("--tiles", o.tiles, "Tile grid as RxC");

  auto* folds = app.add_subcommand("folds", "Write a center-grouped fold plan");
  add_common(folds, o);
  folds->add_option("--manifest", o.manifest, "Manifest CSV");
  folds->add_option("-k,--folds", o.folds, "Number of folds (default 5)");

  auto add_training = [&](CLI::App* cmd) {
    add_common(cmd, o);
    cmd->add_option("--manifest", o.manifest, "Manifest CSV");
    cmd->add_option("--fold-plan", o.fold_plan, "Fold plan JSON (default: derived from the manifest)");
    cmd->add_option("-k,--folds", o.folds, "Number of folds when no plan is given");
    cmd->add_flag("--resume", resume, "Continue an interrupted run in --out");
    cmd->add_option("--halt-after", halt_after, "Stop after this many epochs (testing aid)");
  };
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the two-headed encoders per fold and member");
  add_training(pretrain);
  auto* train = app.add_subcommand("train", "Cross-validated transfer training and ensemble evaluation");
  add_training(train);
  train->add_option("--pretrained", pretrained, "Reuse encoders from an earlier pretrain run");
  train->add_option("--positivity", o.positivity, "any-dr or referable");
  train->add_option("--resamples", o.resamples, "Bootstrap resamples (default 1000)");

  auto* evaluate = app.add_subcommand("evaluate", "Screening metrics with confidence intervals");
  add_common(evaluate, o);
  evaluate->add_option("--predictions", predictions, "CSV of patient_id,truth_grade,predicted_grade");
  evaluate->add_option("--ensemble", ensemble, "ensemble.json written by train");
  evaluate->add_option("--manifest", o.manifest, "Manifest to score with --ensemble");
  evaluate->add_option("--fold", fold, "Use this fold's members and test centers");
  evaluate->add_option("--positivity", o.positivity, "any-dr or referable");
  evaluate->add_option("--resamples", o.resamples, "Bootstrap resamples (default 1000)");

  auto* report = app.add_subcommand("report", "Pooled and per-fold summary of a train run");
  add_common(report, o);
  report->add_option("--run", run_dir, "Output directory of a train run")->required()->check(CLI::ExistingDirectory);
  report->add_option("--positivity", o.positivity, "any-dr or referable");
  report->add_option("--resamples", o.resamples, "Bootstrap resamples (default 1000)");

  std::vector<const char*> argv{"retina_screen"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "retina_screen: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const RunConfig config = resolve(o);
    const fs::path out_dir = o.out;
    if (enhance->parsed()) return cmd_enhance({config, input, out_dir}, out, err);
    if (folds->parsed()) return cmd_folds({config, out_dir}, out, err);
    if (pretrain->parsed() || train->parsed()) {
      TrainArgs t{config, out_dir, pretrain->parsed(), resume, halt_after, std::nullopt};
      if (!pretrained.empty()) t.pretrained = fs::path(pretrained) / "checkpoints";
      return cmd_train(t, out, err);
    }
    if (evaluate->parsed()) {
      EvaluateArgs e{config, out_dir, std::nullopt, std::nullopt, fold};
      if (!predictions.empty()) e.predictions = predictions;
      if (!ensemble.empty()) e.ensemble = ensemble;
      return cmd_evaluate(e, out, err);
    }
    if (report->parsed()) return cmd_report({config, run_dir, out_dir}, out, err);
  } catch (const std::exception& e) {
    err << "retina_screen: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace retina::cli
