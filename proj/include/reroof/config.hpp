#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "reroof/data/synth.hpp"
#include "reroof/impact.hpp"
#include "reroof/pairclf.hpp"
#include "reroof/vae.hpp"

namespace reroof {

/// Everything a pipeline command needs. Stored as JSON; flags override
/// file values and the resolved result is written next to every output.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_root = "data";
  std::string out_dir = "out";
  std::string models_dir;  // empty: same as out_dir
  std::string split = "test";
  std::size_t workers = 1;
  vae::VaeArch vae_arch;
  vae::VaeTrainConfig vae;
  pairclf::ClassifierTrainConfig classifier;
  data::SynthConfig synth;
  impact::ImpactParams impact;

  std::filesystem::path models_path() const {
    return models_dir.empty() ? std::filesystem::path(out_dir) : std::filesystem::path(models_dir);
  }
};

/// The double whose shortest decimal form equals the float's, so 0.9f is
/// written as 0.9 and still reads back as 0.9f.
inline double json_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf - 1, v);
  *res.ptr = '\0';
  return std::strtod(buf, nullptr);
}

}  // namespace reroof

namespace reroof::nn {

inline void to_json(nlohmann::json& j, const AdamConfig& a) {
  j = {{"learning_rate", json_float(a.learning_rate)},
       {"beta1", json_float(a.beta1)},
       {"beta2", json_float(a.beta2)},
       {"epsilon", json_float(a.epsilon)}};
}

inline void from_json(const nlohmann::json& j, AdamConfig& a) {
  a.learning_rate = j.value("learning_rate", a.learning_rate);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.epsilon = j.value("epsilon", a.epsilon);
}

}  // namespace reroof::nn

namespace reroof::data {

inline void to_json(nlohmann::json& j, const AugmentConfig& a) {
  j = {{"brightness_delta_max", json_float(a.brightness_delta_max)},
       {"contrast_factor_min", json_float(a.contrast_factor_min)},
       {"contrast_factor_max", json_float(a.contrast_factor_max)},
       {"saturation_factor_min", json_float(a.saturation_factor_min)},
       {"saturation_factor_max", json_float(a.saturation_factor_max)}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& a) {
  a.brightness_delta_max = j.value("brightness_delta_max", a.brightness_delta_max);
  a.contrast_factor_min = j.value("contrast_factor_min", a.contrast_factor_min);
  a.contrast_factor_max = j.value("contrast_factor_max", a.contrast_factor_max);
  a.saturation_factor_min = j.value("saturation_factor_min", a.saturation_factor_min);
  a.saturation_factor_max = j.value("saturation_factor_max", a.saturation_factor_max);
}

inline void to_json(nlohmann::json& j, const Material& m) {
  j = {{"name", m.name},
       {"color", {json_float(m.color[0]), json_float(m.color[1]), json_float(m.color[2])}},
       {"grain_scale", json_float(m.grain_scale)},
       {"grain_amplitude", json_float(m.grain_amplitude)}};
}

inline void from_json(const nlohmann::json& j, Material& m) {
  m.name = j.value("name", std::string("material"));
  m.color = j.at("color").get<std::array<float, 3>>();
  m.grain_scale = j.value("grain_scale", 1.0f);
  m.grain_amplitude = j.value("grain_amplitude", 0.05f);
}

inline void to_json(nlohmann::json& j, const SynthConfig& s) {
  j = {{"num_buildings", s.num_buildings},
       {"first_year", s.first_year},
       {"last_year", s.last_year},
       {"transition_probability", s.transition_probability},
       {"blur_sigma_min", s.blur_sigma_min},
       {"blur_sigma_max", s.blur_sigma_max},
       {"exposure_gain_min", s.exposure_gain_min},
       {"exposure_gain_max", s.exposure_gain_max},
       {"translation_jitter", s.translation_jitter},
       {"before_materials", s.before_materials},
       {"after_materials", s.after_materials}};
  if (s.split_counts) {
    j["split_counts"] = {{"train", s.split_counts->train},
                         {"validation", s.split_counts->validation},
                         {"test", s.split_counts->test}};
  }
}

inline void from_json(const nlohmann::json& j, SynthConfig& s) {
  s.num_buildings = j.value("num_buildings", s.num_buildings);
  s.first_year = j.value("first_year", s.first_year);
  s.last_year = j.value("last_year", s.last_year);
  s.transition_probability = j.value("transition_probability", s.transition_probability);
  s.blur_sigma_min = j.value("blur_sigma_min", s.blur_sigma_min);
  s.blur_sigma_max = j.value("blur_sigma_max", s.blur_sigma_max);
  s.exposure_gain_min = j.value("exposure_gain_min", s.exposure_gain_min);
  s.exposure_gain_max = j.value("exposure_gain_max", s.exposure_gain_max);
  s.translation_jitter = j.value("translation_jitter", s.translation_jitter);
  if (j.contains("before_materials")) s.before_materials = j["before_materials"].get<std::vector<Material>>();
  if (j.contains("after_materials")) s.after_materials = j["after_materials"].get<std::vector<Material>>();
  if (j.contains("split_counts") && !j["split_counts"].is_null()) {
    const auto& c = j["split_counts"];
    s.split_counts = SplitCounts{c.at("train").get<std::size_t>(), c.at("validation").get<std::size_t>(),
                                 c.at("test").get<std::size_t>()};
  }
}

}  // namespace reroof::data

namespace reroof {

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["data_root"] = c.data_root;
  j["out_dir"] = c.out_dir;
  j["models_dir"] = c.models_dir;
  j["split"] = c.split;
  j["workers"] = c.workers;
  j["vae"] = {{"channels", c.vae_arch.channels},
              {"residual_blocks", c.vae_arch.residual_blocks},
              {"adam", c.vae.adam},
              {"beta", c.vae.beta},
              {"batch_size", c.vae.batch_size},
              {"max_epochs", c.vae.max_epochs},
              {"patience", c.vae.patience},
              {"augment", c.vae.augment},
              {"augmentation", c.vae.augmentation}};
  j["classifier"] = {{"adam", c.classifier.adam},
                     {"batch_size", c.classifier.batch_size},
                     {"max_epochs", c.classifier.max_epochs},
                     {"patience", c.classifier.patience},
                     {"dropout", c.classifier.dropout},
                     {"balance_classes", c.classifier.balance_classes}};
  j["synth"] = c.synth;
  j["impact"] = c.impact;
  return j;
}

/// Fills `c` from JSON; absent keys keep their current values.
inline void merge_json(RunConfig& c, const nlohmann::json& j) {
  try {
    c.seed = j.value("seed", c.seed);
    c.data_root = j.value("data_root", c.data_root);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.models_dir = j.value("models_dir", c.models_dir);
    c.split = j.value("split", c.split);
    c.workers = j.value("workers", c.workers);
    if (j.contains("vae")) {
      const auto& v = j["vae"];
      c.vae_arch.channels = v.value("channels", c.vae_arch.channels);
      c.vae_arch.residual_blocks = v.value("residual_blocks", c.vae_arch.residual_blocks);
      if (v.contains("adam")) v["adam"].get_to(c.vae.adam);
      c.vae.beta = v.value("beta", c.vae.beta);
      c.vae.batch_size = v.value("batch_size", c.vae.batch_size);
      c.vae.max_epochs = v.value("max_epochs", c.vae.max_epochs);
      c.vae.patience = v.value("patience", c.vae.patience);
      c.vae.augment = v.value("augment", c.vae.augment);
      if (v.contains("augmentation")) v["augmentation"].get_to(c.vae.augmentation);
    }
    if (j.contains("classifier")) {
      const auto& v = j["classifier"];
      if (v.contains("adam")) v["adam"].get_to(c.classifier.adam);
      c.classifier.batch_size = v.value("batch_size", c.classifier.batch_size);
      c.classifier.max_epochs = v.value("max_epochs", c.classifier.max_epochs);
      c.classifier.patience = v.value("patience", c.classifier.patience);
      c.classifier.dropout = v.value("dropout", c.classifier.dropout);
      c.classifier.balance_classes = v.value("balance_classes", c.classifier.balance_classes);
    }
    if (j.contains("synth")) j["synth"].get_to(c.synth);
    if (j.contains("impact")) j["impact"].get_to(c.impact);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  RunConfig c;
  try {
    merge_json(c, nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace reroof
