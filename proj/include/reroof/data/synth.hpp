#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "reroof/data/dataset.hpp"

namespace reroof::data {

/// Roof surface: mean colour plus band-limited luminance grain.
struct Material {
  std::string name;
  std::array<float, 3> color{};
  float grain_scale = 1.0f;      // Gaussian smoothing of the grain noise, px
  float grain_amplitude = 0.05f;  // std of the grain after smoothing
};

inline std::vector<Material> default_before_materials() {
  return {
      {"weathered_gravel", {0.50f, 0.47f, 0.42f}, 1.0f, 0.07f},
      {"aged_asphalt", {0.31f, 0.30f, 0.30f}, 0.7f, 0.05f},
      {"rusted_metal", {0.55f, 0.36f, 0.27f}, 2.5f, 0.05f},
      {"faded_tar_paper", {0.40f, 0.36f, 0.32f}, 1.5f, 0.06f},
  };
}

inline std::vector<Material> default_after_materials() {
  return {
      {"white_membrane", {0.90f, 0.91f, 0.92f}, 3.0f, 0.015f},
      {"fresh_asphalt", {0.13f, 0.13f, 0.15f}, 0.7f, 0.03f},
      {"cool_coating", {0.72f, 0.80f, 0.86f}, 2.0f, 0.02f},
  };
}

/// Parameters of the synthetic rooftop-sequence generator.
struct SynthConfig {
  std::size_t num_buildings = 230;
  std::optional<SplitCounts> split_counts;  // default: 150:25:55 proportions
  int first_year = 2012;
  int last_year = 2018;
  double transition_probability = 180.0 / 230.0;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 1.0;
  double exposure_gain_min = 0.85;
  double exposure_gain_max = 1.15;
  double translation_jitter = 1.0;  // max |dx|, |dy| in pixels
  std::vector<Material> before_materials = default_before_materials();
  std::vector<Material> after_materials = default_after_materials();
  std::uint64_t seed = 0;

  /// Clean renders: no blur, unit gain, no jitter.
  SynthConfig& without_confounders() {
    blur_sigma_min = blur_sigma_max = 0.0;
    exposure_gain_min = exposure_gain_max = 1.0;
    translation_jitter = 0.0;
    return *this;
  }

  SplitCounts counts() const {
    return split_counts ? *split_counts : SplitCounts::proportional(num_buildings);
  }

  void validate() const {
    if (!(transition_probability >= 0.0 && transition_probability <= 1.0)) {
      throw ConfigError("synth: transition probability must lie in [0, 1]");
    }
    if (!(translation_jitter >= 0.0)) throw ConfigError("synth: jitter must be >= 0");
    if (last_year <= first_year) throw ConfigError("synth: need at least two years");
    if (!(blur_sigma_min >= 0.0 && blur_sigma_max >= blur_sigma_min)) {
      throw ConfigError("synth: invalid blur sigma range");
    }
    if (!(exposure_gain_min > 0.0 && exposure_gain_max >= exposure_gain_min)) {
      throw ConfigError("synth: invalid exposure gain range");
    }
    if (before_materials.empty() || after_materials.empty()) {
      throw ConfigError("synth: material lists must be non-empty");
    }
    if (split_counts && split_counts->total() != num_buildings) {
      throw ConfigError("synth: split counts must add up to num_buildings");
    }
  }
};

namespace detail {

/// Zero-mean grain field of the given amplitude: white noise, Gaussian
/// smoothing, renormalised to unit std.
inline std::vector<float> grain_field(const Material& m, Rng& rng) {
  Image noise = make_image(kImageSize, kImageSize);
  const std::size_t plane = kImageSize * kImageSize;
  for (std::size_t i = 0; i < plane; ++i) noise[i] = static_cast<float>(rng.normal());
  Image smooth = gaussian_blur(noise, m.grain_scale);
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < plane; ++i) mean += smooth[i];
  mean /= static_cast<double>(plane);
  for (std::size_t i = 0; i < plane; ++i) sq += (smooth[i] - mean) * (smooth[i] - mean);
  const double sd = std::sqrt(sq / static_cast<double>(plane));
  std::vector<float> out(plane);
  for (std::size_t i = 0; i < plane; ++i)
    out[i] = static_cast<float>((smooth[i] - mean) / (sd > 0 ? sd : 1.0) * m.grain_amplitude);
  return out;
}

struct Rect {
  int x0, y0, x1, y1;  // half-open
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Fixed per-building geometry shared by every year.
struct Scene {
  std::array<float, 3> ground{};
  std::vector<float> ground_grain;
  Rect roof{};
  std::vector<Rect> units;
};

inline Scene draw_scene(Rng& rng) {
  Scene s;
  const float base = static_cast<float>(rng.uniform(0.35, 0.55));
  s.ground = {base * static_cast<float>(rng.uniform(0.9, 1.1)),
              base * static_cast<float>(rng.uniform(0.95, 1.15)),
              base * static_cast<float>(rng.uniform(0.8, 1.0))};
  s.ground_grain = grain_field({"ground", {}, 0.6f, 0.04f}, rng);
  const int w = static_cast<int>(rng.uniform(36, 52));
  const int h = static_cast<int>(rng.uniform(36, 52));
  const int cx = 32 + static_cast<int>(rng.uniform(-3, 3));
  const int cy = 32 + static_cast<int>(rng.uniform(-3, 3));
  s.roof = {cx - w / 2, cy - h / 2, cx - w / 2 + w, cy - h / 2 + h};
  const auto n_units = static_cast<std::size_t>(2 + rng.below(4));
  for (std::size_t i = 0; i < n_units; ++i) {
    const int uw = 3 + static_cast<int>(rng.below(4));
    const int uh = 3 + static_cast<int>(rng.below(4));
    const int ux = s.roof.x0 + 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w - uw - 4)));
    const int uy = s.roof.y0 + 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h - uh - 4)));
    s.units.push_back({ux, uy, ux + uw, uy + uh});
  }
  return s;
}

inline Image render(const Scene& s, const Material& m, const std::vector<float>& grain) {
  const int n = static_cast<int>(kImageSize);
  const std::size_t plane = kImageSize * kImageSize;
  Image img = make_image(kImageSize, kImageSize);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * n + x);
      std::array<float, 3> px{};
      if (s.roof.contains(x, y)) {
        bool unit = false, unit_shadow = false;
        for (const auto& u : s.units) {
          unit = unit || u.contains(x, y);
          unit_shadow = unit_shadow || Rect{u.x0 + 1, u.y0 + 1, u.x1 + 1, u.y1 + 1}.contains(x, y);
        }
        if (unit) {
          px = {0.78f, 0.78f, 0.76f};
        } else {
          for (int c = 0; c < 3; ++c) px[c] = m.color[c] + grain[i];
          if (unit_shadow) for (auto& v : px) v *= 0.6f;
        }
      } else {
        const bool shadow = Rect{s.roof.x0 + 2, s.roof.y0 + 2, s.roof.x1 + 2, s.roof.y1 + 2}.contains(x, y);
        for (int c = 0; c < 3; ++c) px[c] = (s.ground[c] + s.ground_grain[i]) * (shadow ? 0.55f : 1.0f);
      }
      for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = px[c];
    }
  }
  clamp_unit(img);
  return img;
}

}  // namespace detail

inline std::string synthetic_building_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "bldg_%04zu", index);
  return buf;
}

/// Renders one building. Each building draws from its own stream
/// Rng::derive(seed, index), in this order: scene geometry, before
/// material, transition flag, transition year, after material, the two
/// grain fields, then per year (gain, blur sigma, dx, dy).
inline ImageSequence generate_building(const SynthConfig& cfg, std::size_t index) {
  Rng rng = Rng::derive(cfg.seed, index);
  const detail::Scene scene = detail::draw_scene(rng);
  const Material& before = cfg.before_materials[rng.below(cfg.before_materials.size())];
  const bool transition = rng.bernoulli(cfg.transition_probability);
  const int n_years = cfg.last_year - cfg.first_year + 1;
  const int year = cfg.first_year + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_years - 1)));
  const Material& after = cfg.after_materials[rng.below(cfg.after_materials.size())];
  const auto grain_before = detail::grain_field(before, rng);
  const auto grain_after = detail::grain_field(after, rng);
  const Image img_before = detail::render(scene, before, grain_before);
  const Image img_after = detail::render(scene, after, grain_after);

  ImageSequence seq;
  seq.building_id = synthetic_building_id(index);
  seq.label = transition ? ReroofLabel::at(year) : ReroofLabel::none();
  for (int y = cfg.first_year; y <= cfg.last_year; ++y) {
    const double gain = rng.uniform(cfg.exposure_gain_min, cfg.exposure_gain_max);
    const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    const double dx = rng.uniform(-cfg.translation_jitter, cfg.translation_jitter);
    const double dy = rng.uniform(-cfg.translation_jitter, cfg.translation_jitter);
    const Image& base = (transition && y >= year) ? img_after : img_before;
    Image img = gaussian_blur(translate(base, dx, dy), sigma);
    if (gain != 1.0) for (auto& v : img.values()) v = static_cast<float>(v * gain);
    clamp_unit(img);
    quantize_u8(img);
    seq.years.push_back(y);
    seq.images.push_back(std::move(img));
  }
  return seq;
}

/// Labeled synthetic dataset; buildings 0..n-1 are assigned to train,
/// validation and test in index order.
inline DatasetSplit generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const SplitCounts counts = cfg.counts();
  DatasetSplit out;
  for (std::size_t i = 0; i < cfg.num_buildings; ++i) {
    auto& dest = i < counts.train                      ? out.train
                 : i < counts.train + counts.validation ? out.validation
                                                        : out.test;
    dest.push_back(generate_building(cfg, i));
  }
  return out;
}

}  // namespace reroof::data
