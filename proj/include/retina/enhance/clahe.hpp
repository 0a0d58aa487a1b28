#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "retina/enhance/image.hpp"

namespace retina {

using Histogram = std::vector<std::uint64_t>;
using ToneMap = std::array<std::uint8_t, 256>;

struct TileRect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct ClaheConfig {
  std::size_t tile_rows = 8;
  std::size_t tile_cols = 8;
  /// Multiple of the uniform bin height (tile_pixels / bins). Infinity disables clipping.
  double clip_limit = 2.0;
  std::size_t bins = 256;

  /// Throws ConfigError for bad parameters, or when the image cannot hold the tile grid.
  void validate(std::size_t height, std::size_t width) const;
};

/// How a cumulative histogram becomes a tone map.
enum class CdfAnchor {
  /// round(255 * (C(v) - C(min)) / (total - C(min))); identity when one bin holds everything.
  anchored,
  /// round(255 * C(v) / total).
  pure,
};

/// Histogram of one tile of a single-channel image. Intensity v falls in bin v * bins / 256.
Histogram tile_histogram(const ImageBuffer& image, const TileRect& tile, std::size_t bins = 256);

/// Clips every bin at `clip_limit` and hands the excess back: floor(excess / bins)
/// to every bin, then one each to bins 0, 1, ... for the remainder. Mass is conserved.
Histogram clip_redistribute(Histogram hist, std::uint64_t clip_limit);

/// 256-entry lookup table from a (clipped) histogram. Non-decreasing.
ToneMap build_mapping(const Histogram& hist, CdfAnchor anchor = CdfAnchor::anchored);

/// Absolute per-bin clip count for a tile: max(1, floor(clip_limit * tile_pixels / bins)).
std::uint64_t absolute_clip_limit(const ClaheConfig& config, std::size_t tile_pixels);

/// Partition of [0, extent) into `count` runs; the last run absorbs the remainder.
std::vector<std::pair<std::size_t, std::size_t>> partition_axis(std::size_t extent, std::size_t count);

/// Contrast limited adaptive histogram equalization, per channel.
///
/// Each output pixel blends the tone maps of the nearest tile centres with
/// bilinear weights in exact integer arithmetic; pixels outside the outermost
/// centres use one or two maps. Output has the input's shape and color space.
ImageBuffer clahe_enhance(const ImageBuffer& image, const ClaheConfig& config,
                          CdfAnchor anchor = CdfAnchor::anchored);

}  // namespace retina
