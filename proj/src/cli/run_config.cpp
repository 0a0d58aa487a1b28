#include "run_config.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <sstream>

#include "retina/common/error.hpp"

namespace retina::cli {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

template <typename T>
void take(ordered_json& obj, const char* key, T& field) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    field = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
  obj.erase(it);
}

std::optional<fs::path> take_path(ordered_json& obj, const char* key, const fs::path& base) {
  auto it = obj.find(key);
  if (it == obj.end()) return std::nullopt;
  std::optional<fs::path> out;
  if (!it->is_null()) {
    if (!it->is_string()) throw ConfigError(std::string("config key '") + key + "' must be a path string");
    fs::path p = it->get<std::string>();
    out = p.is_absolute() ? p : base / p;
  }
  obj.erase(it);
  return out;
}

void reject_leftovers(const ordered_json& obj, const std::string& where) {
  if (!obj.empty()) throw ConfigError("unknown config key '" + where + obj.begin().key() + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("run config: top level must be an object");
  RunConfig c;
  // Written by config.json echoes; informational only.
  j.erase("command");
  j.erase("fold_stats");
  c.manifest = take_path(j, "manifest", base_dir);
  c.fold_plan = take_path(j, "fold_plan", base_dir);
  take(j, "folds", c.folds);

  if (auto it = j.find("clahe"); it != j.end()) {
    ordered_json cl = *it;
    j.erase(it);
    take(cl, "tile_rows", c.clahe.tile_rows);
    take(cl, "tile_cols", c.clahe.tile_cols);
    take(cl, "clip_limit", c.clahe.clip_limit);
    take(cl, "bins", c.clahe.bins);
    reject_leftovers(cl, "clahe.");
  }
  if (auto it = j.find("train"); it != j.end()) {
    c.train = train_config_from_json(it->dump());
    j.erase(it);
  }
  if (auto it = j.find("evaluation"); it != j.end()) {
    ordered_json ev = *it;
    j.erase(it);
    std::string rule = positivity_name(c.evaluation.rule);
    take(ev, "positivity", rule);
    c.evaluation.rule = parse_positivity(rule);
    take(ev, "n_resamples", c.evaluation.n_resamples);
    take(ev, "level", c.evaluation.level);
    reject_leftovers(ev, "evaluation.");
  }
  reject_leftovers(j, "");
  c.evaluation.seed = c.train.seed;
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_text(path), fs::absolute(path).parent_path());
}

ordered_json run_config_json(const RunConfig& c, const std::string& command) {
  ordered_json j;
  j["command"] = command;
  j["manifest"] = c.manifest ? ordered_json(fs::absolute(*c.manifest).lexically_normal().string()) : ordered_json();
  j["fold_plan"] = c.fold_plan ? ordered_json(fs::absolute(*c.fold_plan).lexically_normal().string()) : ordered_json();
  j["folds"] = c.folds;
  j["clahe"] = {{"tile_rows", c.clahe.tile_rows},
                {"tile_cols", c.clahe.tile_cols},
                {"clip_limit", c.clahe.clip_limit},
                {"bins", c.clahe.bins}};
  j["train"] = ordered_json::parse(train_config_to_json(c.train));
  j["evaluation"] = {{"positivity", positivity_name(c.evaluation.rule)},
                     {"n_resamples", c.evaluation.n_resamples},
                     {"level", c.evaluation.level}};
  return j;
}

ordered_json stats_json(const ChannelStats& s) {
  return ordered_json{{"mean", s.mean}, {"std", s.std}};
}

ChannelStats stats_from_json(const ordered_json& j) {
  ChannelStats s;
  try {
    s.mean = j.at("mean").get<std::array<double, 3>>();
    s.std = j.at("std").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("channel stats: ") + e.what());
  }
  return s;
}

RunLog::RunLog(const fs::path& path, bool append, const std::string& command) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  stream_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!stream_) throw ConfigError("cannot open log " + path.string());
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);
  write(ordered_json{{"event", append ? "resume" : "start"}, {"command", command}, {"timestamp", stamp}});
}

void RunLog::write(const ordered_json& line) {
  std::lock_guard lock(mutex_);
  stream_ << line.dump() << '\n';
  stream_.flush();
}

std::size_t thread_cap() {
  const char* env = std::getenv("RETINA_SCREEN_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0' || v == 0) return 1;
  return static_cast<std::size_t>(v);
}

}  // namespace retina::cli
