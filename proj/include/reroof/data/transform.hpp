#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "reroof/data/image.hpp"

namespace reroof::data {

/// Axis-aligned crop rectangle in source pixels.
struct CropSpec {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Largest centred square.
inline CropSpec center_square_crop(const Image& raw) {
  const std::size_t h = image_height(raw), w = image_width(raw);
  const std::size_t side = std::min(h, w);
  return {(w - side) / 2, (h - side) / 2, side, side};
}

inline Image crop(const Image& raw, const CropSpec& spec) {
  require_rgb(raw, "crop");
  const std::size_t h = image_height(raw), w = image_width(raw);
  if (spec.width == 0 || spec.height == 0 || spec.x + spec.width > w || spec.y + spec.height > h) {
    throw PreconditionError("crop " + std::to_string(spec.width) + "x" +
                            std::to_string(spec.height) + "+" + std::to_string(spec.x) + "+" +
                            std::to_string(spec.y) + " lies outside a " + std::to_string(w) +
                            "x" + std::to_string(h) + " image");
  }
  Image out = make_image(spec.height, spec.width);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x)
        out[(c * spec.height + y) * spec.width + x] = raw[(c * h + spec.y + y) * w + spec.x + x];
  return out;
}

/// Samples channel `c` at fractional source position (sy, sx); coordinates
/// are clamped to the image so borders extend outward.
inline float sample_bilinear(const Image& img, std::size_t c, double sy, double sx) {
  const std::size_t h = image_height(img), w = image_width(img);
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  const float* p = img.data() + c * h * w;
  const double top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
  const double bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

/// Bilinear resize with half-pixel-centre alignment: output pixel (y, x)
/// samples source ((y + 0.5) * H/OH - 0.5, (x + 0.5) * W/OW - 0.5).
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  require_rgb(img, "resize_bilinear");
  const double sy = static_cast<double>(image_height(img)) / static_cast<double>(out_h);
  const double sx = static_cast<double>(image_width(img)) / static_cast<double>(out_w);
  Image out = make_image(out_h, out_w);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out[(c * out_h + y) * out_w + x] =
            sample_bilinear(img, c, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
  return out;
}

/// Crop (default: centred square) then resize to 64x64, clamped to [0, 1].
inline Image preprocess(const Image& raw, std::optional<CropSpec> spec = std::nullopt) {
  require_rgb(raw, "preprocess");
  Image cropped = crop(raw, spec ? *spec : center_square_crop(raw));
  Image out = (image_height(cropped) == kImageSize && image_width(cropped) == kImageSize)
                  ? std::move(cropped)
                  : resize_bilinear(cropped, kImageSize, kImageSize);
  clamp_unit(out);
  return out;
}

/// Translates content by (dx, dy) pixels with bilinear resampling.
inline Image translate(const Image& img, double dx, double dy) {
  if (dx == 0.0 && dy == 0.0) return img;
  const std::size_t h = image_height(img), w = image_width(img);
  Image out = make_image(h, w);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] =
            sample_bilinear(img, c, static_cast<double>(y) - dy, static_cast<double>(x) - dx);
  return out;
}

/// Separable Gaussian blur, radius ceil(3 sigma), replicated borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const std::size_t h = image_height(img), w = image_width(img);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    norm += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= norm;
  auto at = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  Image tmp = make_image(h, w), out = make_image(h, w);
  for (std::size_t c = 0; c < kChannels; ++c) {
    const float* src = img.data() + c * h * w;
    float* mid = tmp.data() + c * h * w;
    float* dst = out.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 src[y * w + at(static_cast<std::ptrdiff_t>(x) + i, w)];
        mid[y * w + x] = static_cast<float>(acc);
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 mid[at(static_cast<std::ptrdiff_t>(y) + i, h) * w + x];
        dst[y * w + x] = static_cast<float>(acc);
      }
  }
  return out;
}

}  // namespace reroof::data
