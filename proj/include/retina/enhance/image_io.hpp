#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "retina/enhance/image.hpp"

namespace retina {

/// Reads binary PGM/PPM (maxval 255) or 8-bit PNG, detected by content.
/// PNG alpha is dropped; palette and low bit depths are expanded.
ImageBuffer read_image(const std::filesystem::path& path);

/// Writes PNG when the extension is .png, otherwise binary PGM (gray) / PPM (rgb).
void write_image(const std::filesystem::path& path, const ImageBuffer& image);

ImageBuffer decode_pnm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pnm(const ImageBuffer& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace retina
