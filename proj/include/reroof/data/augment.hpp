#pragma once

#include "reroof/data/image.hpp"
#include "reroof/numerics/rng.hpp"

namespace reroof::data {

/// Ranges for photometric training augmentation. Each range must contain
/// the identity (delta 0, factor 1).
struct AugmentConfig {
  float brightness_delta_max = 0.2f;
  float contrast_factor_min = 0.8f;
  float contrast_factor_max = 1.25f;
  float saturation_factor_min = 0.8f;
  float saturation_factor_max = 1.25f;

  static AugmentConfig identity() { return {0.0f, 1.0f, 1.0f, 1.0f, 1.0f}; }

  void validate() const {
    if (!(brightness_delta_max >= 0.0f)) {
      throw ConfigError("augment: brightness_delta_max must be >= 0");
    }
    auto check = [](float lo, float hi, const char* what) {
      if (!(lo >= 0.0f && lo <= 1.0f && hi >= 1.0f)) {
        throw ConfigError(std::string("augment: ") + what +
                          " factor range must be non-negative and contain 1");
      }
    };
    check(contrast_factor_min, contrast_factor_max, "contrast");
    check(saturation_factor_min, saturation_factor_max, "saturation");
  }
};

inline Image adjust_brightness(Image img, float delta) {
  require_rgb(img, "adjust_brightness");
  for (auto& v : img.values()) v += delta;
  clamp_unit(img);
  return img;
}

/// Blends every pixel toward the image's mean luma: factor 0 gives a flat
/// gray image, 1 the original.
inline Image adjust_contrast(Image img, float factor) {
  require_rgb(img, "adjust_contrast");
  const std::size_t plane = image_height(img) * image_width(img);
  float* r = img.data();
  float* g = r + plane;
  float* b = g + plane;
  double acc = 0.0;
  for (std::size_t i = 0; i < plane; ++i) acc += luma(r[i], g[i], b[i]);
  const float mean = static_cast<float>(acc / static_cast<double>(plane));
  for (auto& v : img.values()) v = (v - mean) * factor + mean;
  clamp_unit(img);
  return img;
}

/// Blends every pixel toward its own luma: factor 0 gives grayscale.
inline Image adjust_saturation(Image img, float factor) {
  require_rgb(img, "adjust_saturation");
  const std::size_t plane = image_height(img) * image_width(img);
  float* r = img.data();
  float* g = r + plane;
  float* b = g + plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const float y = luma(r[i], g[i], b[i]);
    r[i] = y + (r[i] - y) * factor;
    g[i] = y + (g[i] - y) * factor;
    b[i] = y + (b[i] - y) * factor;
  }
  clamp_unit(img);
  return img;
}

/// Random brightness, contrast, then saturation. Always consumes exactly
/// three uniforms from `rng` in that order; transforms whose sampled value
/// is the identity are skipped so the identity config is exact.
inline Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  const auto delta = static_cast<float>(
      rng.uniform(-cfg.brightness_delta_max, cfg.brightness_delta_max));
  const auto contrast =
      static_cast<float>(rng.uniform(cfg.contrast_factor_min, cfg.contrast_factor_max));
  const auto saturation =
      static_cast<float>(rng.uniform(cfg.saturation_factor_min, cfg.saturation_factor_max));
  Image out = img;
  if (delta != 0.0f) out = adjust_brightness(std::move(out), delta);
  if (contrast != 1.0f) out = adjust_contrast(std::move(out), contrast);
  if (saturation != 1.0f) out = adjust_saturation(std::move(out), saturation);
  return out;
}

}  // namespace reroof::data
