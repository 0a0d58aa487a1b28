#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace retina {

enum class Eye { left, right };
enum class Tier { golden, tfl };

/// ICDR grade 0 (no DR) .. 4 (proliferative).
using Grade = int;
inline constexpr int kGradeCount = 5;

struct Sample {
  std::string patient_id;
  std::string center_id;
  Eye eye = Eye::left;
  std::string image_path;
  std::optional<Grade> grade;
  Tier tier = Tier::tfl;
  bool gradable = true;
  std::optional<bool> rbg_elevated;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Manifest {
  std::vector<Sample> samples;
  /// SHA-256 of the source bytes.
  std::string provenance;
};

inline constexpr std::string_view kManifestHeader =
    "patient_id,center_id,eye,image_path,grade,tier,gradable,rbg_elevated";

/// Parses manifest CSV text. Every bad row is collected and reported in one
/// ParseError whose message names each offending line number.
Manifest parse_manifest(std::string_view text);
Manifest load_manifest(const std::filesystem::path& path);

std::string serialize_manifest(const Manifest& manifest);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

std::string grade_token(std::optional<Grade> grade);

struct GradabilitySplit {
  Manifest kept;
  std::size_t excluded_count = 0;
  double excluded_fraction = 0.0;
};

GradabilitySplit exclude_ungradable(const Manifest& manifest);

}  // namespace retina
