#include "retina/enhance/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "retina/common/error.hpp"

namespace retina {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::size_t pnm_header_value(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ParseError("PNM: malformed header");
  std::size_t value = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + (bytes[pos++] - '0');
    if (value > (1u << 24)) throw ParseError("PNM: header value too large");
  }
  return value;
}

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ParseError(std::string("PNG: ") + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    throw ParseError("PNG: " + message);
  }
  return ImageBuffer(png.height, png.width, color ? ColorSpace::rgb : ColorSpace::gray, std::move(pixels));
}

void write_png(const fs::path& path, const ImageBuffer& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.data().data(), 0, nullptr)) {
    throw ParseError("PNG: cannot write " + path.string() + ": " + png.message);
  }
}

}  // namespace

ImageBuffer decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("PNM: expected binary P5 or P6 magic");
  }
  const bool rgb = bytes[1] == '6';
  std::size_t pos = 2;
  const std::size_t width = pnm_header_value(bytes, pos);
  const std::size_t height = pnm_header_value(bytes, pos);
  const std::size_t maxval = pnm_header_value(bytes, pos);
  if (width == 0 || height == 0) throw ParseError("PNM: zero extent");
  if (maxval != 255) throw ParseError("PNM: only 8-bit (maxval 255) images are supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError("PNM: malformed header");
  ++pos;
  const std::size_t expected = width * height * (rgb ? 3 : 1);
  if (bytes.size() - pos < expected) throw ParseError("PNM: truncated pixel data");
  std::vector<std::uint8_t> pixels(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + expected));
  return ImageBuffer(height, width, rgb ? ColorSpace::rgb : ColorSpace::gray, std::move(pixels));
}

std::vector<std::uint8_t> encode_pnm(const ImageBuffer& image) {
  const std::string header = std::string(image.channels() == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.data().begin(), image.data().end());
  return out;
}

ImageBuffer read_image(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  static constexpr std::uint8_t kPngMagic[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kPngMagic, 4) == 0) return decode_png(bytes);
  try {
    return decode_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_image(const fs::path& path, const ImageBuffer& image) {
  if (image.empty()) throw ConfigError("write_image: empty image");
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") {
    write_png(path, image);
    return;
  }
  const auto bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace retina
