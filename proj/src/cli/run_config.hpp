#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "retina/data/augment.hpp"
#include "retina/enhance/clahe.hpp"
#include "retina/eval/report.hpp"
#include "retina/train/trainer.hpp"

namespace retina::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

/// Everything a subcommand may need. Relative paths in a config file are
/// resolved against the file's directory.
struct RunConfig {
  std::optional<fs::path> manifest;
  std::optional<fs::path> fold_plan;
  std::size_t folds = 5;
  ClaheConfig clahe;
  TrainConfig train;
  EvaluationOptions evaluation;
};

RunConfig load_run_config(const fs::path& path);
RunConfig parse_run_config(const std::string& text, const fs::path& base_dir);
/// Resolved form written as config.json; loading it back replays the run.
ordered_json run_config_json(const RunConfig& config, const std::string& command);

ordered_json stats_json(const ChannelStats& stats);
ChannelStats stats_from_json(const ordered_json& j);

std::string read_text(const fs::path& path);
/// Writes through a temporary file and a rename, so readers never see a partial file.
void write_text(const fs::path& path, const std::string& text);

/// Append-only JSON-lines log. The header line is the only place a wall-clock
/// timestamp appears.
class RunLog {
 public:
  RunLog(const fs::path& path, bool append, const std::string& command);
  void write(const ordered_json& line);

 private:
  std::mutex mutex_;
  std::ofstream stream_;
};

/// Parallelism cap from RETINA_SCREEN_THREADS; 1 when unset or invalid.
std::size_t thread_cap();

}  // namespace retina::cli
