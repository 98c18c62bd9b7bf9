#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "reroof/data/image.hpp"

namespace reroof::data {

/// 8-bit value k decodes to k / 255.
inline float decode_u8(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

inline std::uint8_t encode_u8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Rounds every value to the nearest representable 8-bit level so that a
/// PNG round trip is lossless.
inline void quantize_u8(Image& img) {
  for (auto& v : img.values()) v = decode_u8(encode_u8(v));
}

/// Reads any PNG (gray, palette, alpha, 16-bit are converted) as RGB.
inline Image read_png(const std::filesystem::path& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.string().c_str())) {
    throw DatasetError("unreadable image " + path.string() + ": " + im.message);
  }
  im.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = im.message;
    png_image_free(&im);
    throw DatasetError("unreadable image " + path.string() + ": " + msg);
  }
  const std::size_t h = im.height, w = im.width;
  Image img = make_image(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < kChannels; ++c)
        img[(c * h + y) * w + x] = decode_u8(buf[(y * w + x) * 3 + c]);
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  require_rgb(img, "write_png");
  const std::size_t h = image_height(img), w = image_width(img);
  std::vector<std::uint8_t> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < kChannels; ++c)
        buf[(y * w + x) * 3 + c] = encode_u8(img[(c * h + y) * w + x]);
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(w);
  im.height = static_cast<png_uint_32>(h);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw DatasetError("cannot write image " + path.string() + ": " + im.message);
  }
}

}  // namespace reroof::data
