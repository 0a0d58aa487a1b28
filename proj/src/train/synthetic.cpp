#include "retina/train/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "retina/common/error.hpp"
#include "retina/data/augment.hpp"
#include "retina/enhance/image_io.hpp"

namespace retina {

ImageBuffer synthetic_fundus(Grade grade, std::size_t size, double noise, Rng& rng, double grade_offset) {
  if (grade < 0 || grade >= kGradeCount) throw ConfigError("synthetic_fundus: grade out of range");
  if (size == 0) throw ConfigError("synthetic_fundus: size must be positive");
  const double angle = grade * std::numbers::pi / kGradeCount;
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double freq = 2.0 * std::numbers::pi / 4.0;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double gain[3];
  for (double& g : gain) g = rng.uniform(0.25, 0.4);
  ImageBuffer img(size, size, ColorSpace::rgb);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double wave = std::sin(freq * (dx * static_cast<double>(x) + dy * static_cast<double>(y)) + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = 0.5 + grade_offset * (grade - 2) + gain[c] * wave + noise * rng.normal();
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  return img;
}

Dataset make_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (!(config.tfl_fraction >= 0.0 && config.tfl_fraction <= 1.0)) throw ConfigError("tfl_fraction must lie in [0, 1]");
  static constexpr double kMean[3] = {0.5, 0.5, 0.5};
  static constexpr double kStd[3] = {0.25, 0.25, 0.25};
  Rng tiers(derive_seed(seed, "tiers"));
  Dataset out;
  for (std::size_t i = 0; i < config.count; ++i) {
    Rng rng(derive_seed(derive_seed(seed, "image"), static_cast<std::uint64_t>(i)));
    const Grade g = static_cast<Grade>(i % kGradeCount);
    TrainSample s;
    s.image = standardize(image_to_tensor(synthetic_fundus(g, config.size, config.noise, rng)), kMean, kStd);
    s.grade = g;
    s.tier = tiers.bernoulli(config.tfl_fraction) ? Tier::tfl : Tier::golden;
    s.key = i;
    out.push_back(std::move(s));
  }
  return out;
}

SyntheticCohort make_synthetic_cohort(const SyntheticCohortConfig& config, std::uint64_t seed) {
  if (config.centers == 0 || config.patients_per_center == 0) throw ConfigError("synthetic cohort must be non-empty");
  SyntheticCohort cohort;
  for (std::size_t c = 0; c < config.centers; ++c) {
    for (std::size_t p = 0; p < config.patients_per_center; ++p) {
      const std::size_t index = c * config.patients_per_center + p;
      char id[32];
      std::snprintf(id, sizeof id, "P%05zu", index);
      Sample s;
      s.patient_id = id;
      s.center_id = "C" + std::to_string(c + 1);
      s.eye = Eye::left;
      s.image_path = "images/" + s.patient_id + ".ppm";
      s.grade = static_cast<Grade>(p % kGradeCount);
      s.tier = Tier::golden;
      s.gradable = true;
      Rng rng(derive_seed(derive_seed(seed, "cohort"), static_cast<std::uint64_t>(index)));
      cohort.images.emplace(s.image_path, synthetic_fundus(*s.grade, config.size, config.noise, rng, config.grade_offset));
      cohort.manifest.samples.push_back(std::move(s));
    }
  }
  return cohort;
}

void write_synthetic_cohort(const std::filesystem::path& dir, const SyntheticCohort& cohort) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& [path, image] : cohort.images) write_image(dir / path, image);
  write_manifest(dir / "manifest.csv", cohort.manifest);
}

}  // namespace retina
