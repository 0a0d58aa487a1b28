#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "retina/data/manifest.hpp"
#include "retina/enhance/image.hpp"
#include "retina/train/trainer.hpp"

namespace retina {

/// Grade g is drawn as sinusoidal stripes at angle g * pi / 5 with a random
/// phase and per-channel gain, plus Gaussian pixel noise (sd `noise` on the
/// [0, 1] scale). `grade_offset` shifts the mean intensity by
/// grade_offset * (g - 2), which makes the grades linearly separable.
ImageBuffer synthetic_fundus(Grade grade, std::size_t size, double noise, Rng& rng, double grade_offset = 0.0);

struct SyntheticConfig {
  std::size_t count = 200;
  std::size_t size = 8;
  double noise = 0.1;
  /// Each sample is TFL-tier with this probability.
  double tfl_fraction = 0.0;
};

/// Grades cycle 0..4; images are standardized with mean 0.5 and sd 0.25 per channel.
Dataset make_synthetic(const SyntheticConfig& config, std::uint64_t seed);

struct SyntheticCohortConfig {
  std::size_t centers = 5;
  std::size_t patients_per_center = 40;
  std::size_t size = 8;
  double noise = 0.1;
  double grade_offset = 0.0;
};

struct SyntheticCohort {
  Manifest manifest;
  /// Keyed by the sample's image_path.
  std::map<std::string, ImageBuffer> images;
};

/// One gradable left-eye sample per patient, grades cycling 0..4 within each
/// center, image paths "images/<patient>.ppm".
SyntheticCohort make_synthetic_cohort(const SyntheticCohortConfig& config, std::uint64_t seed);
/// Writes manifest.csv and the images under `dir`.
void write_synthetic_cohort(const std::filesystem::path& dir, const SyntheticCohort& cohort);

}  // namespace retina
