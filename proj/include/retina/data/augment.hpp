#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "retina/autodiff/tensor.hpp"
#include "retina/common/rng.hpp"
#include "retina/enhance/image.hpp"

namespace retina {

/// Per-channel statistics on the [0, 1] pixel scale.
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

struct AugmentConfig {
  std::size_t resize_to = 256;
  std::size_t crop_to = 224;
  /// When false the crop is centred and no randomness is spent on it.
  bool random_crop = true;
  double flip_prob = 0.5;
  double hue_jitter = 0.05;
  double saturation_jitter = 0.2;
  double contrast_jitter = 0.2;
  std::size_t occlusion_min = 5;
  std::size_t occlusion_max = 8;
  std::size_t occlusion_size_min = 8;
  std::size_t occlusion_size_max = 32;
  /// Dataset statistics; ignored when per_image_standardize is set.
  ChannelStats stats;
  bool per_image_standardize = false;
  std::uint64_t seed = 0;

  void validate() const;
  /// Deterministic resize and centre crop only.
  static AugmentConfig plain(std::size_t resize_to, std::size_t crop_to);
};

/// What the random stages chose; useful for tests and logs.
struct AugmentTrace {
  std::size_t crop_top = 0;
  std::size_t crop_left = 0;
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double hue_shift = 0.0;
  double saturation_scale = 1.0;
  double contrast_scale = 1.0;
  std::size_t occlusion_count = 0;
};

/// Bilinear resize with half-pixel centres and edge clamping.
ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t height, std::size_t width);

/// Image as a [3, H, W] tensor on [0, 1]; gray input is replicated.
Tensor image_to_tensor(const ImageBuffer& image);

/// resize, random crop, flips, hue/saturation/contrast jitter, occlusion,
/// standardize. Returns [3, crop_to, crop_to].
Tensor augment(const ImageBuffer& image, const AugmentConfig& config, Rng& rng, AugmentTrace* trace = nullptr);

/// Stream for sample `index` of a run seeded with `seed`.
Rng sample_stream(std::uint64_t seed, std::size_t index);

/// (x - mean[c]) / std[c] for [C, H, W] or [N, C, H, W] input.
Tensor standardize(const Tensor& tensor, std::span<const double> mean, std::span<const double> std);

/// Population mean and standard deviation per channel over [C,H,W] or [N,C,H,W] tensors.
ChannelStats channel_stats(std::span<const Tensor> tensors);

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

}  // namespace retina
