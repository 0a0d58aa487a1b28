#include "retina/data/manifest.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "retina/common/digest.hpp"
#include "retina/common/error.hpp"

namespace retina {
namespace {

constexpr std::size_t kColumns = 8;

std::vector<std::string> split_csv_line(std::string_view line, bool& ok) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  ok = true;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"' && fields.back().empty()) {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  if (quoted) ok = false;
  return fields;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::optional<bool> parse_bool(const std::string& token) {
  if (token == "true") return true;
  if (token == "false") return false;
  return std::nullopt;
}

const char* bool_token(bool b) { return b ? "true" : "false"; }

Sample parse_row(const std::vector<std::string>& f) {
  Sample s;
  s.patient_id = f[0];
  s.center_id = f[1];
  if (s.patient_id.empty()) throw ParseError("empty patient_id");
  if (s.center_id.empty()) throw ParseError("empty center_id");
  if (f[2] == "left") s.eye = Eye::left;
  else if (f[2] == "right") s.eye = Eye::right;
  else throw ParseError("unknown eye '" + f[2] + "'");
  s.image_path = f[3];
  if (f[4] == "NA") {
    s.grade = std::nullopt;
  } else if (f[4].size() == 3 && f[4].compare(0, 2, "DR") == 0 && f[4][2] >= '0' && f[4][2] <= '4') {
    s.grade = f[4][2] - '0';
  } else {
    throw ParseError("unknown grade token '" + f[4] + "'");
  }
  if (f[5] == "golden") s.tier = Tier::golden;
  else if (f[5] == "tfl") s.tier = Tier::tfl;
  else throw ParseError("unknown tier '" + f[5] + "'");
  const auto gradable = parse_bool(f[6]);
  if (!gradable) throw ParseError("gradable must be true or false, got '" + f[6] + "'");
  s.gradable = *gradable;
  if (!f[7].empty()) {
    s.rbg_elevated = parse_bool(f[7]);
    if (!s.rbg_elevated) throw ParseError("rbg_elevated must be true, false or empty, got '" + f[7] + "'");
  }
  if (s.tier == Tier::golden && !s.grade) throw ParseError("golden tier sample without a grade");
  return s;
}

}  // namespace

std::string grade_token(std::optional<Grade> grade) {
  if (!grade) return "NA";
  return "DR" + std::to_string(*grade);
}

Manifest parse_manifest(std::string_view text) {
  Manifest manifest;
  manifest.provenance = sha256_hex(text);
  std::vector<std::string> problems;
  std::map<std::pair<std::string, Eye>, std::size_t> seen_eye;
  std::map<std::string, std::pair<std::string, std::size_t>> patient_center;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
      if (line != kManifestHeader)
        throw ParseError("line 1: header must be exactly '" + std::string(kManifestHeader) + "'");
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    bool ok = true;
    const auto fields = split_csv_line(line, ok);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (!ok) {
      problems.push_back(where + "unterminated quote");
      continue;
    }
    if (fields.size() != kColumns) {
      problems.push_back(where + "expected " + std::to_string(kColumns) + " fields, got " +
                         std::to_string(fields.size()));
      continue;
    }
    try {
      Sample s = parse_row(fields);
      const auto key = std::make_pair(s.patient_id, s.eye);
      if (auto it = seen_eye.find(key); it != seen_eye.end()) {
        problems.push_back(where + "duplicate (patient_id, eye) also on line " + std::to_string(it->second));
        continue;
      }
      auto [it, fresh] = patient_center.try_emplace(s.patient_id, s.center_id, line_no);
      if (!fresh && it->second.first != s.center_id) {
        problems.push_back(where + "patient " + s.patient_id + " has center " + s.center_id + " but line " +
                           std::to_string(it->second.second) + " says " + it->second.first);
        continue;
      }
      seen_eye.emplace(key, line_no);
      manifest.samples.push_back(std::move(s));
    } catch (const ParseError& e) {
      problems.push_back(where + e.what());
    }
  }
  if (!header_seen) throw ParseError("line 1: missing header");
  if (!problems.empty()) {
    std::string message = "manifest has " + std::to_string(problems.size()) + " invalid row(s)";
    for (const auto& p : problems) message += "\n  " + p;
    throw ParseError(message);
  }
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str());
}

std::string serialize_manifest(const Manifest& manifest) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const Sample& s : manifest.samples) {
    out += csv_field(s.patient_id) + ',' + csv_field(s.center_id) + ',' + (s.eye == Eye::left ? "left" : "right") +
           ',' + csv_field(s.image_path) + ',' + grade_token(s.grade) + ',' +
           (s.tier == Tier::golden ? "golden" : "tfl") + ',' + bool_token(s.gradable) + ',' +
           (s.rbg_elevated ? bool_token(*s.rbg_elevated) : "") + '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest " + path.string());
  out << serialize_manifest(manifest);
}

GradabilitySplit exclude_ungradable(const Manifest& manifest) {
  GradabilitySplit split;
  split.kept.provenance = manifest.provenance;
  for (const Sample& s : manifest.samples) {
    if (s.gradable) split.kept.samples.push_back(s);
    else ++split.excluded_count;
  }
  const std::size_t total = manifest.samples.size();
  split.excluded_fraction = total == 0 ? 0.0 : static_cast<double>(split.excluded_count) / static_cast<double>(total);
  return split;
}

}  // namespace retina
