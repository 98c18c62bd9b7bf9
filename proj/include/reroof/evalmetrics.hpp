#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reroof/data/dataset.hpp"

namespace reroof::eval {

using data::LabelMap;
using data::ReroofLabel;

inline constexpr int kReportSchemaVersion = 1;

struct BuildingRecord {
  std::string building_id;
  ReroofLabel truth;
  ReroofLabel prediction;
  std::optional<int> abs_error;  // set only when both sides have a reroof year
};

struct EvalReport {
  std::string method;
  double detection_accuracy = 0.0;
  std::optional<double> avg_error_years;  // nullopt when no building qualifies
  std::size_t n_buildings = 0;
  std::size_t n_correct_detections = 0;
  std::size_t n_reroof_correct = 0;
  std::vector<BuildingRecord> records;  // sorted by building id
};

/// Detection accuracy counts a building as correct when reroof presence
/// matches, regardless of year. The average error is the mean |year
/// difference| over buildings where both truth and prediction have a year.
inline EvalReport evaluate(const LabelMap& truths, const LabelMap& predictions,
                           std::string method = {}) {
  if (truths.empty()) throw PreconditionError("evaluate: no buildings");
  for (const auto& [id, _] : predictions) {
    if (!truths.count(id)) throw PreconditionError("evaluate: prediction for unknown building '" + id + "'");
  }
  EvalReport r;
  r.method = std::move(method);
  long long error_sum = 0;
  for (const auto& [id, truth] : truths) {
    auto it = predictions.find(id);
    if (it == predictions.end()) throw PreconditionError("evaluate: no prediction for building '" + id + "'");
    BuildingRecord rec{id, truth, it->second, std::nullopt};
    if (truth.has_reroof() == rec.prediction.has_reroof()) ++r.n_correct_detections;
    if (truth.has_reroof() && rec.prediction.has_reroof()) {
      rec.abs_error = std::abs(truth.year() - rec.prediction.year());
      error_sum += *rec.abs_error;
      ++r.n_reroof_correct;
    }
    r.records.push_back(std::move(rec));
  }
  r.n_buildings = truths.size();
  r.detection_accuracy =
      static_cast<double>(r.n_correct_detections) / static_cast<double>(r.n_buildings);
  if (r.n_reroof_correct > 0) {
    r.avg_error_years = static_cast<double>(error_sum) / static_cast<double>(r.n_reroof_correct);
  }
  return r;
}

inline nlohmann::json label_json(const ReroofLabel& l) {
  return l.has_reroof() ? nlohmann::json(l.year()) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["method"] = r.method;
  j["detection_accuracy"] = r.detection_accuracy;
  j["avg_error_years"] = r.avg_error_years ? nlohmann::json(*r.avg_error_years) : nlohmann::json(nullptr);
  j["n_buildings"] = r.n_buildings;
  j["n_correct_detections"] = r.n_correct_detections;
  j["n_reroof_correct"] = r.n_reroof_correct;
  j["records"] = nlohmann::json::array();
  for (const auto& rec : r.records) {
    j["records"].push_back({{"building_id", rec.building_id},
                            {"truth", label_json(rec.truth)},
                            {"prediction", label_json(rec.prediction)},
                            {"abs_error", rec.abs_error ? nlohmann::json(*rec.abs_error) : nlohmann::json(nullptr)}});
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kReportSchemaVersion) {
    throw PreconditionError("unsupported report schema version");
  }
  EvalReport r;
  auto label = [](const nlohmann::json& v) {
    return v.is_null() ? ReroofLabel::none() : ReroofLabel::at(v.get<int>());
  };
  r.method = j.value("method", std::string{});
  r.detection_accuracy = j.at("detection_accuracy").get<double>();
  if (!j.at("avg_error_years").is_null()) r.avg_error_years = j.at("avg_error_years").get<double>();
  r.n_buildings = j.at("n_buildings").get<std::size_t>();
  r.n_correct_detections = j.at("n_correct_detections").get<std::size_t>();
  r.n_reroof_correct = j.at("n_reroof_correct").get<std::size_t>();
  for (const auto& rec : j.at("records")) {
    BuildingRecord b{rec.at("building_id").get<std::string>(), label(rec.at("truth")),
                     label(rec.at("prediction")), std::nullopt};
    if (!rec.at("abs_error").is_null()) b.abs_error = rec.at("abs_error").get<int>();
    r.records.push_back(std::move(b));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Method comparison table

struct ComparisonRow {
  std::string method;
  double detection_accuracy = 0.0;
  std::optional<double> avg_error_years;
  bool published = false;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;

  std::string to_csv() const;
  std::string to_text() const;
};

/// Rows for each report, optionally followed by the published reference
/// values (labelled as such).
inline ComparisonTable compare_methods(const std::vector<EvalReport>& reports,
                                       bool include_published = false) {
  if (reports.empty()) throw PreconditionError("compare_methods: need at least one report");
  ComparisonTable t;
  for (const auto& r : reports)
    t.rows.push_back({r.method.empty() ? "unnamed" : r.method, r.detection_accuracy, r.avg_error_years, false});
  if (include_published) {
    t.rows.push_back({"beta-VAE (published)", 0.872, 0.680, true});
    t.rows.push_back({"Categorical baseline (published)", 0.648, 1.868, true});
  }
  return t;
}

namespace detail {
inline std::string fmt3(std::optional<double> v) {
  if (!v) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}
}  // namespace detail

inline std::string ComparisonTable::to_csv() const {
  std::string out = "method,detection_accuracy,avg_error_years\n";
  for (const auto& r : rows)
    out += r.method + "," + detail::fmt3(r.detection_accuracy) + "," + detail::fmt3(r.avg_error_years) + "\n";
  return out;
}

inline std::string ComparisonTable::to_text() const {
  std::size_t w = std::string("Method").size();
  for (const auto& r : rows) w = std::max(w, r.method.size());
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-*s  %18s  %17s\n", static_cast<int>(w), "Method",
                "Detection accuracy", "Avg error (years)");
  out += buf;
  out += std::string(w + 2 + 18 + 2 + 17, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %18s  %17s\n", static_cast<int>(w), r.method.c_str(),
                  detail::fmt3(r.detection_accuracy).c_str(), detail::fmt3(r.avg_error_years).c_str());
    out += buf;
  }
  return out;
}

}  // namespace reroof::eval
