#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace retina {

enum class ColorSpace { gray, rgb };

std::size_t channel_count(ColorSpace space);

/// 8-bit image, row-major with interleaved channels.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, ColorSpace space, std::uint8_t fill = 0);
  ImageBuffer(std::size_t height, std::size_t width, ColorSpace space, std::vector<std::uint8_t> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channel_count(space_); }
  ColorSpace color_space() const { return space_; }
  bool empty() const { return data_.empty(); }

  std::span<std::uint8_t> data() { return data_; }
  std::span<const std::uint8_t> data() const { return data_; }

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[(y * width_ + x) * channels() + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * channels() + c];
  }

  /// One channel as a gray image.
  ImageBuffer channel(std::size_t c) const;
  void set_channel(std::size_t c, const ImageBuffer& plane);

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  ColorSpace space_ = ColorSpace::gray;
  std::vector<std::uint8_t> data_;
};

}  // namespace retina
