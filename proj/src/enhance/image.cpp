#include "retina/enhance/image.hpp"

#include <string>

#include "retina/common/error.hpp"

namespace retina {

std::size_t channel_count(ColorSpace space) { return space == ColorSpace::rgb ? 3 : 1; }

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, ColorSpace space, std::uint8_t fill)
    : height_(height), width_(width), space_(space), data_(height * width * channel_count(space), fill) {}

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, ColorSpace space,
                         std::vector<std::uint8_t> data)
    : height_(height), width_(width), space_(space), data_(std::move(data)) {
  if (data_.size() != height_ * width_ * channels()) {
    throw DimensionError("image " + std::to_string(height_) + "x" + std::to_string(width_) + "x" +
                         std::to_string(channels()) + " needs " +
                         std::to_string(height_ * width_ * channels()) + " bytes, got " +
                         std::to_string(data_.size()));
  }
}

ImageBuffer ImageBuffer::channel(std::size_t c) const {
  if (c >= channels()) throw DimensionError("channel index out of range");
  ImageBuffer plane(height_, width_, ColorSpace::gray);
  const std::size_t stride = channels();
  for (std::size_t i = 0; i < height_ * width_; ++i) plane.data_[i] = data_[i * stride + c];
  return plane;
}

void ImageBuffer::set_channel(std::size_t c, const ImageBuffer& plane) {
  if (c >= channels() || plane.height_ != height_ || plane.width_ != width_ || plane.channels() != 1) {
    throw DimensionError("set_channel: plane does not fit image");
  }
  const std::size_t stride = channels();
  for (std::size_t i = 0; i < height_ * width_; ++i) data_[i * stride + c] = plane.data_[i];
}

}  // namespace retina
