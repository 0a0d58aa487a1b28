#include "retina/enhance/clahe.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "retina/common/error.hpp"

namespace retina {

void ClaheConfig::validate(std::size_t height, std::size_t width) const {
  if (tile_rows == 0 || tile_cols == 0) throw ConfigError("CLAHE tile grid must be at least 1x1");
  if (bins == 0 || bins > 256) throw ConfigError("CLAHE bin count must lie in [1, 256]");
  if (std::isnan(clip_limit) || clip_limit < 1.0) {
    throw ConfigError("CLAHE clip limit must be >= 1.0, got " + std::to_string(clip_limit));
  }
  if (tile_rows > height || tile_cols > width) {
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                      " is smaller than the " + std::to_string(tile_rows) + "x" +
                      std::to_string(tile_cols) + " tile grid");
  }
}

Histogram tile_histogram(const ImageBuffer& image, const TileRect& tile, std::size_t bins) {
  if (image.channels() != 1) throw ConfigError("tile_histogram needs a single-channel image");
  if (tile.height == 0 || tile.width == 0) throw ConfigError("tile_histogram: empty tile");
  if (bins == 0 || bins > 256) throw ConfigError("tile_histogram: bins must lie in [1, 256]");
  if (tile.top + tile.height > image.height() || tile.left + tile.width > image.width()) {
    throw ConfigError("tile_histogram: tile exceeds image bounds");
  }
  Histogram hist(bins, 0);
  for (std::size_t y = tile.top; y < tile.top + tile.height; ++y) {
    for (std::size_t x = tile.left; x < tile.left + tile.width; ++x) {
      ++hist[image.at(y, x) * bins / 256];
    }
  }
  return hist;
}

Histogram clip_redistribute(Histogram hist, std::uint64_t clip_limit) {
  if (hist.empty()) return hist;
  std::uint64_t excess = 0;
  for (auto& count : hist) {
    if (count > clip_limit) {
      excess += count - clip_limit;
      count = clip_limit;
    }
  }
  const std::uint64_t n = hist.size();
  const std::uint64_t share = excess / n;
  for (auto& count : hist) count += share;
  const std::uint64_t remainder = excess % n;
  for (std::uint64_t i = 0; i < remainder; ++i) ++hist[i];
  return hist;
}

ToneMap build_mapping(const Histogram& hist, CdfAnchor anchor) {
  if (hist.empty() || hist.size() > 256) throw ConfigError("build_mapping: bins must lie in [1, 256]");
  std::vector<std::uint64_t> cumulative(hist.size());
  std::uint64_t running = 0;
  for (std::size_t b = 0; b < hist.size(); ++b) cumulative[b] = running += hist[b];
  const std::uint64_t total = running;
  if (total == 0) throw ConfigError("build_mapping: histogram is empty");

  std::uint64_t base = 0;
  if (anchor == CdfAnchor::anchored) {
    const auto first = std::find_if(hist.begin(), hist.end(), [](std::uint64_t c) { return c > 0; });
    base = cumulative[static_cast<std::size_t>(first - hist.begin())];
  }
  ToneMap map{};
  for (std::size_t v = 0; v < 256; ++v) {
    if (anchor == CdfAnchor::anchored && base == total) {
      map[v] = static_cast<std::uint8_t>(v);
      continue;
    }
    const std::uint64_t c = cumulative[v * hist.size() / 256];
    const std::uint64_t num = c > base ? 255 * (c - base) : 0;
    const std::uint64_t den = total - base;
    map[v] = static_cast<std::uint8_t>((2 * num + den) / (2 * den));
  }
  return map;
}

std::uint64_t absolute_clip_limit(const ClaheConfig& config, std::size_t tile_pixels) {
  const double scaled = config.clip_limit * static_cast<double>(tile_pixels) / static_cast<double>(config.bins);
  if (!std::isfinite(scaled) || scaled >= static_cast<double>(tile_pixels)) return tile_pixels;
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(scaled)));
}

std::vector<std::pair<std::size_t, std::size_t>> partition_axis(std::size_t extent, std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  const std::size_t base = extent / count;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t size = i + 1 == count ? extent - base * (count - 1) : base;
    runs.emplace_back(i * base, size);
  }
  return runs;
}

namespace {

// Interpolation along one axis in doubled pixel coordinates, so tile centres
// (start + (size - 1) / 2) are integers. value = (w0 * m[i0] + w1 * m[i1]) / den.
struct AxisBlend {
  std::size_t i0, i1;
  std::uint64_t w0, w1, den;
};

std::vector<AxisBlend> axis_blends(std::size_t extent, const std::vector<std::pair<std::size_t, std::size_t>>& runs) {
  std::vector<std::uint64_t> centre;
  for (auto [start, size] : runs) centre.push_back(2 * start + size - 1);
  std::vector<AxisBlend> out(extent);
  std::size_t i = 0;
  for (std::size_t p = 0; p < extent; ++p) {
    const std::uint64_t pos = 2 * p;
    if (pos <= centre.front()) {
      out[p] = {0, 0, 1, 0, 1};
    } else if (pos >= centre.back()) {
      out[p] = {centre.size() - 1, centre.size() - 1, 1, 0, 1};
    } else {
      while (centre[i + 1] <= pos) ++i;
      const std::uint64_t den = centre[i + 1] - centre[i];
      out[p] = {i, i + 1, centre[i + 1] - pos, pos - centre[i], den};
    }
  }
  return out;
}

ImageBuffer enhance_plane(const ImageBuffer& plane, const ClaheConfig& config, CdfAnchor anchor) {
  const auto rows = partition_axis(plane.height(), config.tile_rows);
  const auto cols = partition_axis(plane.width(), config.tile_cols);
  std::vector<ToneMap> maps;
  maps.reserve(rows.size() * cols.size());
  for (auto [top, h] : rows) {
    for (auto [left, w] : cols) {
      const Histogram hist = tile_histogram(plane, TileRect{top, left, h, w}, config.bins);
      // A single-level tile keeps its identity map; clipping would otherwise
      // spread its mass and shift a flat region.
      const bool flat = std::count_if(hist.begin(), hist.end(), [](std::uint64_t c) { return c > 0; }) == 1;
      maps.push_back(build_mapping(flat ? hist : clip_redistribute(hist, absolute_clip_limit(config, h * w)), anchor));
    }
  }
  const auto by = axis_blends(plane.height(), rows);
  const auto bx = axis_blends(plane.width(), cols);
  const std::size_t ncols = cols.size();
  ImageBuffer out(plane.height(), plane.width(), ColorSpace::gray);
  for (std::size_t y = 0; y < plane.height(); ++y) {
    const AxisBlend& ay = by[y];
    for (std::size_t x = 0; x < plane.width(); ++x) {
      const AxisBlend& ax = bx[x];
      const std::uint8_t v = plane.at(y, x);
      auto row_mix = [&](std::size_t r) {
        return ax.w0 * maps[r * ncols + ax.i0][v] + ax.w1 * maps[r * ncols + ax.i1][v];
      };
      const std::uint64_t num = ay.w0 * row_mix(ay.i0) + ay.w1 * row_mix(ay.i1);
      const std::uint64_t den = ay.den * ax.den;
      out.at(y, x) = static_cast<std::uint8_t>((2 * num + den) / (2 * den));
    }
  }
  return out;
}

}  // namespace

ImageBuffer clahe_enhance(const ImageBuffer& image, const ClaheConfig& config, CdfAnchor anchor) {
  config.validate(image.height(), image.width());
  if (image.channels() == 1) return enhance_plane(image, config, anchor);
  ImageBuffer out(image.height(), image.width(), image.color_space());
  for (std::size_t c = 0; c < image.channels(); ++c) {
    out.set_channel(c, enhance_plane(image.channel(c), config, anchor));
  }
  return out;
}

}  // namespace retina
