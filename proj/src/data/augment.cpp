#include "retina/data/augment.hpp"

#include <algorithm>
#include <cmath>

#include "retina/common/error.hpp"

namespace retina {
namespace {

// Planar float image, channel-major, values on [0, 1].
struct Planes {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> v;  // 3 * height * width
  double& at(std::size_t c, std::size_t y, std::size_t x) { return v[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return v[(c * height + y) * width + x]; }
};

Planes to_planes(const ImageBuffer& image) {
  Planes p{image.height(), image.width(), std::vector<double>(3 * image.height() * image.width())};
  const std::size_t ch = image.channels();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) p.at(c, y, x) = image.at(y, x, ch == 1 ? 0 : c) / 255.0;
  return p;
}

// Source coordinate for output index i under half-pixel alignment, clamped.
void source_span(std::size_t i, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& t) {
  double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in - 1));
  i0 = static_cast<std::size_t>(std::floor(s));
  i1 = std::min(i0 + 1, in - 1);
  t = s - static_cast<double>(i0);
}

Planes resize_planes(const Planes& src, std::size_t height, std::size_t width) {
  Planes out{height, width, std::vector<double>(3 * height * width)};
  std::vector<std::size_t> x0(width), x1(width);
  std::vector<double> tx(width);
  for (std::size_t x = 0; x < width; ++x) source_span(x, src.width, width, x0[x], x1[x], tx[x]);
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double ty;
    source_span(y, src.height, height, y0, y1, ty);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t x = 0; x < width; ++x) {
        const double top = src.at(c, y0, x0[x]) * (1 - tx[x]) + src.at(c, y0, x1[x]) * tx[x];
        const double bottom = src.at(c, y1, x0[x]) * (1 - tx[x]) + src.at(c, y1, x1[x]) * tx[x];
        out.at(c, y, x) = top * (1 - ty) + bottom * ty;
      }
  }
  return out;
}

void jitter(Planes& p, double hue_shift, double saturation_scale, double contrast_scale) {
  const std::size_t n = p.height * p.width;
  double* r = p.v.data();
  double* g = r + n;
  double* b = g + n;
  if (hue_shift != 0.0 || saturation_scale != 1.0) {
    for (std::size_t i = 0; i < n; ++i) {
      double h, s, v;
      rgb_to_hsv(r[i], g[i], b[i], h, s, v);
      h += hue_shift;
      h -= std::floor(h);
      s = std::clamp(s * saturation_scale, 0.0, 1.0);
      hsv_to_rgb(h, s, v, r[i], g[i], b[i]);
    }
  }
  if (contrast_scale != 1.0) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    mean /= static_cast<double>(n);
    for (double& x : p.v) x = std::clamp(mean + (x - mean) * contrast_scale, 0.0, 1.0);
  }
}

ChannelStats plane_stats(const Planes& p) {
  ChannelStats st;
  const std::size_t n = p.height * p.width;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += p.v[c * n + i];
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (p.v[c * n + i] - mean) * (p.v[c * n + i] - mean);
    st.mean[c] = mean;
    st.std[c] = std::sqrt(ss / static_cast<double>(n));
    if (st.std[c] <= 0.0) st.std[c] = 1.0;  // flat channel: centre only
  }
  return st;
}

}  // namespace

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) h = (g - b) / d;
  else if (mx == g) h = 2.0 + (b - r) / d;
  else h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double h6 = (h - std::floor(h)) * 6.0;
  const int sector = std::min(static_cast<int>(h6), 5);
  const double f = h6 - sector;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

void AugmentConfig::validate() const {
  if (crop_to == 0 || resize_to == 0) throw ConfigError("augment: sizes must be positive");
  if (crop_to > resize_to) throw ConfigError("augment: crop_to exceeds resize_to");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("augment: flip_prob must lie in [0, 1]");
  if (!(hue_jitter >= 0.0 && hue_jitter <= 0.5)) throw ConfigError("augment: hue_jitter must lie in [0, 0.5]");
  if (!(saturation_jitter >= 0.0 && saturation_jitter < 1.0) || !(contrast_jitter >= 0.0 && contrast_jitter < 1.0))
    throw ConfigError("augment: saturation/contrast jitter must lie in [0, 1)");
  if (occlusion_min > occlusion_max) throw ConfigError("augment: occlusion count range is reversed");
  if (occlusion_max > 0) {
    if (occlusion_size_min == 0 || occlusion_size_min > occlusion_size_max)
      throw ConfigError("augment: occlusion size range is empty");
    if (occlusion_size_max > crop_to) throw ConfigError("augment: occlusion larger than crop");
  }
  for (double s : stats.std)
    if (!(s > 0.0)) throw ConfigError("augment: dataset std must be positive");
}

AugmentConfig AugmentConfig::plain(std::size_t resize_to, std::size_t crop_to) {
  AugmentConfig c;
  c.resize_to = resize_to;
  c.crop_to = crop_to;
  c.random_crop = false;
  c.flip_prob = 0.0;
  c.hue_jitter = c.saturation_jitter = c.contrast_jitter = 0.0;
  c.occlusion_min = c.occlusion_max = 0;
  return c;
}

ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t height, std::size_t width) {
  if (image.empty() || height == 0 || width == 0) throw ConfigError("resize: empty image or target");
  const Planes p = resize_planes(to_planes(image), height, width);
  ImageBuffer out(height, width, image.color_space());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < image.channels(); ++c)
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(p.at(c, y, x), 0.0, 1.0) * 255.0));
  return out;
}

Tensor image_to_tensor(const ImageBuffer& image) {
  Planes p = to_planes(image);
  return Tensor({3, p.height, p.width}, std::move(p.v));
}

Rng sample_stream(std::uint64_t seed, std::size_t index) {
  return Rng(derive_seed(derive_seed(seed, "augment"), static_cast<std::uint64_t>(index)));
}

Tensor augment(const ImageBuffer& image, const AugmentConfig& config, Rng& rng, AugmentTrace* trace) {
  config.validate();
  if (image.empty()) throw ConfigError("augment: empty image");
  AugmentTrace local;
  AugmentTrace& tr = trace ? *trace : local;
  tr = AugmentTrace{};

  const std::size_t R = config.resize_to, C = config.crop_to;
  const Planes resized = resize_planes(to_planes(image), R, R);

  if (config.random_crop) {
    tr.crop_top = static_cast<std::size_t>(rng.below(R - C + 1));
    tr.crop_left = static_cast<std::size_t>(rng.below(R - C + 1));
  } else {
    tr.crop_top = tr.crop_left = (R - C) / 2;
  }
  if (config.flip_prob > 0.0) {
    tr.flip_horizontal = rng.bernoulli(config.flip_prob);
    tr.flip_vertical = rng.bernoulli(config.flip_prob);
  }
  Planes crop{C, C, std::vector<double>(3 * C * C)};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < C; ++y)
      for (std::size_t x = 0; x < C; ++x) {
        const std::size_t sy = tr.crop_top + (tr.flip_vertical ? C - 1 - y : y);
        const std::size_t sx = tr.crop_left + (tr.flip_horizontal ? C - 1 - x : x);
        crop.at(c, y, x) = resized.at(c, sy, sx);
      }

  if (config.hue_jitter > 0.0) tr.hue_shift = rng.uniform(-config.hue_jitter, config.hue_jitter);
  if (config.saturation_jitter > 0.0)
    tr.saturation_scale = 1.0 + rng.uniform(-config.saturation_jitter, config.saturation_jitter);
  if (config.contrast_jitter > 0.0)
    tr.contrast_scale = 1.0 + rng.uniform(-config.contrast_jitter, config.contrast_jitter);
  jitter(crop, tr.hue_shift, tr.saturation_scale, tr.contrast_scale);

  const ChannelStats stats = config.per_image_standardize ? plane_stats(crop) : config.stats;

  if (config.occlusion_max > 0) {
    tr.occlusion_count = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(config.occlusion_min), static_cast<std::int64_t>(config.occlusion_max)));
    for (std::size_t k = 0; k < tr.occlusion_count; ++k) {
      const auto lo = static_cast<std::int64_t>(config.occlusion_size_min);
      const auto hi = static_cast<std::int64_t>(config.occlusion_size_max);
      const auto h = static_cast<std::size_t>(rng.between(lo, hi));
      const auto w = static_cast<std::size_t>(rng.between(lo, hi));
      const auto top = static_cast<std::size_t>(rng.below(C - h + 1));
      const auto left = static_cast<std::size_t>(rng.below(C - w + 1));
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = top; y < top + h; ++y)
          for (std::size_t x = left; x < left + w; ++x) crop.at(c, y, x) = stats.mean[c];
    }
  }

  return standardize(Tensor({3, C, C}, std::move(crop.v)), stats.mean, stats.std);
}

Tensor standardize(const Tensor& tensor, std::span<const double> mean, std::span<const double> std) {
  if (tensor.rank() != 3 && tensor.rank() != 4)
    throw DimensionError("standardize: expected [C,H,W] or [N,C,H,W], got " + shape_string(tensor.shape()));
  const std::size_t axis = tensor.rank() - 3;
  const std::size_t channels = tensor.dim(axis);
  if (mean.size() != channels || std.size() != channels)
    throw DimensionError("standardize: statistics do not match channel count");
  for (double s : std)
    if (!(s > 0.0)) throw ConfigError("standardize: std must be positive");
  const std::size_t plane = tensor.dim(axis + 1) * tensor.dim(axis + 2);
  Tensor out = tensor;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t c = (i / plane) % channels;
    d[i] = (d[i] - mean[c]) / std[c];
  }
  return out;
}

ChannelStats channel_stats(std::span<const Tensor> tensors) {
  ChannelStats st;
  std::array<double, 3> sum{}, count{};
  auto visit = [&](auto&& fn) {
    for (const Tensor& t : tensors) {
      if (t.rank() != 3 && t.rank() != 4) throw DimensionError("channel_stats: expected [C,H,W] or [N,C,H,W]");
      const std::size_t axis = t.rank() - 3;
      if (t.dim(axis) != 3) throw DimensionError("channel_stats: expected 3 channels");
      const std::size_t plane = t.dim(axis + 1) * t.dim(axis + 2);
      for (std::size_t i = 0; i < t.size(); ++i) fn((i / plane) % 3, t[i]);
    }
  };
  visit([&](std::size_t c, double x) {
    sum[c] += x;
    count[c] += 1;
  });
  for (std::size_t c = 0; c < 3; ++c) {
    if (count[c] == 0) throw ConfigError("channel_stats: no data");
    st.mean[c] = sum[c] / count[c];
  }
  std::array<double, 3> ss{};
  visit([&](std::size_t c, double x) { ss[c] += (x - st.mean[c]) * (x - st.mean[c]); });
  for (std::size_t c = 0; c < 3; ++c) st.std[c] = std::sqrt(ss[c] / count[c]);
  return st;
}

}  // namespace retina
