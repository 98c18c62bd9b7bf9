#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reroof/data/png_io.hpp"
#include "reroof/data/transform.hpp"
#include "reroof/numerics/rng.hpp"

namespace reroof::data {

/// Either no reroof within the observed window, or the first year whose
/// image shows the new roof.
class ReroofLabel {
public:
  ReroofLabel() = default;
  static ReroofLabel none() { return {}; }
  static ReroofLabel at(int year) {
    ReroofLabel l;
    l.year_ = year;
    return l;
  }

  bool has_reroof() const { return year_.has_value(); }
  int year() const { return year_.value(); }
  const std::optional<int>& maybe_year() const { return year_; }

  friend bool operator==(const ReroofLabel&, const ReroofLabel&) = default;

private:
  std::optional<int> year_;
};

inline std::string to_string(const ReroofLabel& l) {
  return l.has_reroof() ? std::to_string(l.year()) : std::string("none");
}

/// One building: ascending years, one image per year, and (when known) its
/// ground-truth label.
struct ImageSequence {
  std::string building_id;
  std::vector<int> years;
  std::vector<Image> images;
  std::optional<ReroofLabel> label;

  int first_year() const { return years.front(); }
  int last_year() const { return years.back(); }

  void validate() const {
    if (building_id.empty()) throw DatasetError("sequence without building id");
    if (years.empty()) throw DatasetError(building_id + ": sequence has no images");
    if (years.size() != images.size()) {
      throw DatasetError(building_id + ": " + std::to_string(years.size()) + " years but " +
                         std::to_string(images.size()) + " images");
    }
    for (std::size_t i = 1; i < years.size(); ++i) {
      if (years[i] <= years[i - 1]) {
        throw DatasetError(building_id + ": years must be strictly increasing");
      }
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& img = images[i];
      if (img.shape() != nn::Shape{kChannels, kImageSize, kImageSize}) {
        throw DatasetError(building_id + "/" + std::to_string(years[i]) +
                           ": expected a 3x64x64 image, got " + nn::shape_string(img.shape()));
      }
      for (float v : img.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
          throw DatasetError(building_id + "/" + std::to_string(years[i]) +
                             ": pixel values must lie in [0, 1]");
        }
      }
    }
    if (label && label->has_reroof()) check_label_year(label->year());
  }

  /// A transition is only observable between two images, so the label year
  /// must satisfy first_year < year <= last_year.
  void check_label_year(int year) const {
    if (year <= first_year() || year > last_year()) {
      throw DatasetError(building_id + ": reroof year " + std::to_string(year) +
                         " is not observable in (" + std::to_string(first_year()) + ", " +
                         std::to_string(last_year()) + "]");
    }
  }
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"train", "validation", "test"};
  return names;
}

struct DatasetSplit {
  std::vector<ImageSequence> train;
  std::vector<ImageSequence> validation;
  std::vector<ImageSequence> test;

  std::vector<ImageSequence>& by_name(const std::string& name) {
    if (name == "train") return train;
    if (name == "validation") return validation;
    if (name == "test") return test;
    throw PreconditionError("unknown split '" + name + "'");
  }
  const std::vector<ImageSequence>& by_name(const std::string& name) const {
    return const_cast<DatasetSplit*>(this)->by_name(name);
  }

  std::size_t building_count() const { return train.size() + validation.size() + test.size(); }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& name : split_names()) {
      for (const auto& seq : by_name(name)) {
        seq.validate();
        if (!seen.insert(seq.building_id).second) {
          throw DatasetError("duplicate building id '" + seq.building_id + "'");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Label maps: building_id -> year or null. Used for labels.json and for
// prediction files.

using LabelMap = std::map<std::string, ReroofLabel>;

inline nlohmann::json label_map_to_json(const LabelMap& labels) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, l] : labels) {
    j[id] = l.has_reroof() ? nlohmann::json(l.year()) : nlohmann::json(nullptr);
  }
  return j;
}

inline LabelMap label_map_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw DatasetError(what + ": expected an object of building_id -> year|null");
  LabelMap out;
  for (const auto& [id, v] : j.items()) {
    if (v.is_null()) out[id] = ReroofLabel::none();
    else if (v.is_number_integer()) out[id] = ReroofLabel::at(v.get<int>());
    else throw DatasetError(what + ": label for '" + id + "' must be an integer year or null");
  }
  return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DatasetError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline LabelMap read_label_map(const std::filesystem::path& path) {
  return label_map_from_json(read_json_file(path), path.string());
}

inline void write_label_map(const std::filesystem::path& path, const LabelMap& labels) {
  write_json_file(path, label_map_to_json(labels));
}

inline LabelMap truth_labels(const std::vector<ImageSequence>& sequences) {
  LabelMap out;
  for (const auto& s : sequences) {
    if (!s.label) throw PreconditionError(s.building_id + ": sequence is unlabeled");
    out[s.building_id] = *s.label;
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk layout:
//   <root>/<split>/<building_id>/<year>.png   8-bit RGB
//   <root>/labels.json                        building_id -> year | null
//   <root>/splits.json                        split name -> [building_id, ...]
//
// Every building in a dataset must cover the same set of years (the union
// over all buildings); a building lacking one of them is a missing-image
// error. Images that are not 64x64 are centre-cropped and resized on load.
// Buildings absent from labels.json load as unlabeled.

inline void write_dataset(const DatasetSplit& split, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  split.validate();
  fs::create_directories(root);
  LabelMap labels;
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& name : split_names()) {
    splits[name] = nlohmann::json::array();
    fs::create_directories(root / name);
    for (const auto& seq : split.by_name(name)) {
      splits[name].push_back(seq.building_id);
      const fs::path dir = root / name / seq.building_id;
      fs::create_directories(dir);
      for (std::size_t i = 0; i < seq.years.size(); ++i)
        write_png(dir / (std::to_string(seq.years[i]) + ".png"), seq.images[i]);
      if (seq.label) labels[seq.building_id] = *seq.label;
    }
  }
  write_label_map(root / "labels.json", labels);
  write_json_file(root / "splits.json", splits);
}

namespace detail {

inline std::optional<int> parse_year_stem(const std::filesystem::path& file) {
  const std::string stem = file.stem().string();
  if (stem.empty() || stem.size() > 6) return std::nullopt;
  for (char ch : stem)
    if (ch < '0' || ch > '9') return std::nullopt;
  return std::stoi(stem);
}

inline ImageSequence read_sequence_dir(const std::filesystem::path& dir, const std::string& id) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError(id + ": missing image directory " + dir.string());
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    if (auto y = parse_year_stem(entry.path())) files.emplace_back(*y, entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DatasetError(id + ": no <year>.png images in " + dir.string());
  ImageSequence seq;
  seq.building_id = id;
  for (const auto& [year, path] : files) {
    if (!seq.years.empty() && seq.years.back() == year) {
      throw DatasetError(id + ": duplicate image for year " + std::to_string(year));
    }
    Image img = read_png(path);
    if (image_height(img) != kImageSize || image_width(img) != kImageSize) img = preprocess(img);
    seq.years.push_back(year);
    seq.images.push_back(std::move(img));
  }
  return seq;
}

/// Checks shared year grid, label observability, and id uniqueness.
inline void finalize(DatasetSplit& split, const LabelMap& labels) {
  std::set<int> grid;
  for (const auto& name : split_names())
    for (const auto& seq : split.by_name(name)) grid.insert(seq.years.begin(), seq.years.end());
  for (const auto& name : split_names()) {
    for (auto& seq : split.by_name(name)) {
      for (int y : grid) {
        if (!std::binary_search(seq.years.begin(), seq.years.end(), y)) {
          throw DatasetError(seq.building_id + ": missing image for year " + std::to_string(y));
        }
      }
      if (auto it = labels.find(seq.building_id); it != labels.end()) {
        if (it->second.has_reroof()) seq.check_label_year(it->second.year());
        seq.label = it->second;
      }
    }
  }
  split.validate();
}

}  // namespace detail

inline DatasetSplit load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DatasetError("dataset root not found: " + root.string());
  const LabelMap labels = read_label_map(root / "labels.json");
  const nlohmann::json splits = read_json_file(root / "splits.json");
  if (!splits.is_object()) throw DatasetError("splits.json: expected an object");

  DatasetSplit out;
  std::set<std::string> seen;
  for (const auto& [name, ids] : splits.items()) {
    auto& dest = out.by_name(name);
    if (!ids.is_array()) throw DatasetError("splits.json: '" + name + "' must be a list");
    for (const auto& idj : ids) {
      if (!idj.is_string()) throw DatasetError("splits.json: building ids must be strings");
      const std::string id = idj.get<std::string>();
      if (!seen.insert(id).second) throw DatasetError("duplicate building id '" + id + "'");
      dest.push_back(detail::read_sequence_dir(root / name / id, id));
    }
  }
  detail::finalize(out, labels);
  return out;
}

// ---------------------------------------------------------------------------
// Flat-layout adapter, for image collections organised per building rather
// than per split:
//   <root>/<building_id>/<year>.png        any size; centre-cropped to 64x64
//   <root>/labels.csv                      header `building_id,reroof_year`;
//                                          empty or `none` means no reroof
// Buildings are shuffled with `seed` and assigned to train/validation/test
// in the 150:25:55 proportions of the reference collection.

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + validation + test; }

  /// 150:25:55 proportions, rounding train and validation; test takes the rest.
  static SplitCounts proportional(std::size_t n) {
    SplitCounts c;
    c.train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 150.0 / 230.0));
    c.validation = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 25.0 / 230.0));
    if (c.train + c.validation > n) c.validation = n - c.train;
    c.test = n - c.train - c.validation;
    return c;
  }
};

inline LabelMap read_labels_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DatasetError("cannot open " + path.string());
  LabelMap out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DatasetError(path.string() + ": malformed row '" + line + "'");
    const std::string id = line.substr(0, comma);
    const std::string year = line.substr(comma + 1);
    if (out.count(id)) throw DatasetError("duplicate building id '" + id + "'");
    if (year.empty() || year == "none" || year == "null") {
      out[id] = ReroofLabel::none();
    } else {
      try {
        out[id] = ReroofLabel::at(std::stoi(year));
      } catch (const std::exception&) {
        throw DatasetError(path.string() + ": bad reroof year '" + year + "' for " + id);
      }
    }
  }
  return out;
}

inline DatasetSplit load_flat_dataset(const std::filesystem::path& root, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DatasetError("dataset root not found: " + root.string());
  const LabelMap labels = read_labels_csv(root / "labels.csv");
  std::vector<std::string> ids;
  for (const auto& [id, _] : labels) ids.push_back(id);
  Rng rng(seed);
  rng.shuffle(ids);
  const SplitCounts counts = SplitCounts::proportional(ids.size());
  DatasetSplit out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& dest = i < counts.train                      ? out.train
                 : i < counts.train + counts.validation ? out.validation
                                                        : out.test;
    dest.push_back(detail::read_sequence_dir(root / ids[i], ids[i]));
  }
  detail::finalize(out, labels);
  return out;
}

}  // namespace reroof::data
