#pragma once

#include <optional>
#include <ostream>
#include <string>

#include "retina/data/folds.hpp"
#include "run_config.hpp"

namespace retina::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitItemFailure = 1;
inline constexpr int kExitUsage = 2;

struct EnhanceArgs {
  RunConfig config;
  fs::path input;
  fs::path out;
};

struct FoldsArgs {
  RunConfig config;
  fs::path out;
};

struct TrainArgs {
  RunConfig config;
  fs::path out;
  bool pretrain_only = false;
  bool resume = false;
  /// Stop cleanly after this many epochs in this invocation (for resume tests).
  std::optional<std::size_t> halt_after;
  /// Output directory of an earlier `pretrain` run whose encoders to reuse.
  std::optional<fs::path> pretrained;
};

struct EvaluateArgs {
  RunConfig config;
  fs::path out;
  std::optional<fs::path> predictions;
  std::optional<fs::path> ensemble;
  std::optional<std::size_t> fold;
};

struct ReportArgs {
  RunConfig config;
  fs::path run;
  fs::path out;
};

int cmd_enhance(const EnhanceArgs& args, std::ostream& out, std::ostream& err);
int cmd_folds(const FoldsArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err);
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err);

/// Reads the manifest and resolves image paths against its directory.
struct ManifestSource {
  Manifest manifest;
  fs::path base;
  ImageBuffer load(const Sample& sample) const;
};
ManifestSource open_manifest(const RunConfig& config);
FoldPlan resolve_fold_plan(const RunConfig& config, const Manifest& manifest);

/// Report rows plus prevalence of positive truth grades, written as
/// <dir>/report.json and <dir>/report.txt. Returns the text table.
std::string write_pair_report(const fs::path& dir, std::span<const GradePair> pairs, const EvaluationOptions& options);

}  // namespace retina::cli
