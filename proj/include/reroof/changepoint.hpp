#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "reroof/data/dataset.hpp"
#include "reroof/pairclf.hpp"
#include "reroof/vae.hpp"

namespace reroof::changepoint {

using data::ReroofLabel;

struct TracePoint {
  int year = 0;     // later year of the adjacent pair (year - 1, year)
  double p = 0.0;   // probability that the two roofs differ
};

struct TransitionPrediction {
  ReroofLabel predicted;
  std::vector<TracePoint> trace;
};

inline constexpr double kDecisionThreshold = 0.5;

/// No reroof when every p_t < 0.5; otherwise the year of the largest p_t,
/// ties going to the earliest year.
inline ReroofLabel decide_transition(const std::vector<TracePoint>& trace) {
  const TracePoint* best = nullptr;
  for (const auto& t : trace) {
    if (best == nullptr || t.p > best->p) best = &t;
  }
  if (best == nullptr || !(best->p >= kDecisionThreshold)) return ReroofLabel::none();
  return ReroofLabel::at(best->year);
}

inline TransitionPrediction predict_from_probabilities(const std::vector<int>& years,
                                                       const std::vector<double>& adjacent_p) {
  if (years.size() < 2) throw PreconditionError("transition inference needs at least two images");
  if (adjacent_p.size() != years.size() - 1) {
    throw DimensionError("expected " + std::to_string(years.size() - 1) +
                         " adjacent probabilities, got " + std::to_string(adjacent_p.size()));
  }
  TransitionPrediction out;
  for (std::size_t i = 0; i < adjacent_p.size(); ++i) out.trace.push_back({years[i + 1], adjacent_p[i]});
  out.predicted = decide_transition(out.trace);
  return out;
}

/// Embeds every image, classifies each adjacent pair (t-1, t), then applies
/// the threshold/argmax rule.
inline TransitionPrediction infer_transition(const vae::Vae& model,
                                             const pairclf::PairClassifier& clf,
                                             const data::ImageSequence& seq) {
  if (seq.images.size() < 2) {
    throw PreconditionError(seq.building_id + ": transition inference needs at least two images");
  }
  const auto means = pairclf::embed_sequence(model, seq);
  nn::Tensor x(nn::Shape{means.size() - 1, pairclf::kPairInput});
  for (std::size_t i = 0; i + 1 < means.size(); ++i) {
    std::copy(means[i].begin(), means[i].end(), x.data() + i * pairclf::kPairInput);
    std::copy(means[i + 1].begin(), means[i + 1].end(),
              x.data() + i * pairclf::kPairInput + vae::kLatentDim);
  }
  const auto probs = clf.probabilities(x);
  return predict_from_probabilities(seq.years, std::vector<double>(probs.begin(), probs.end()));
}

// ---------------------------------------------------------------------------
// Categorical baseline

/// Empirical distribution over {no reroof} and each observed reroof year.
class CategoricalModel {
public:
  static CategoricalModel fit(const std::vector<ReroofLabel>& labels) {
    if (labels.empty()) throw PreconditionError("categorical baseline: no training labels");
    std::map<std::optional<int>, std::size_t> counts;
    for (const auto& l : labels) ++counts[l.maybe_year()];
    CategoricalModel m;
    for (const auto& [year, n] : counts) {
      m.outcomes_.push_back(year ? ReroofLabel::at(*year) : ReroofLabel::none());
      m.probabilities_.push_back(static_cast<double>(n) / static_cast<double>(labels.size()));
    }
    return m;
  }

  /// Explicit distribution; probabilities must be non-negative and sum to 1.
  static CategoricalModel from_distribution(std::vector<ReroofLabel> outcomes,
                                            std::vector<double> probabilities) {
    if (outcomes.empty() || outcomes.size() != probabilities.size()) {
      throw PreconditionError("categorical baseline: outcomes and probabilities must match");
    }
    double total = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0)) throw PreconditionError("categorical baseline: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw PreconditionError("categorical baseline: probabilities must sum to 1");
    }
    CategoricalModel m;
    m.outcomes_ = std::move(outcomes);
    m.probabilities_ = std::move(probabilities);
    return m;
  }

  bool fitted() const { return !outcomes_.empty(); }
  const std::vector<ReroofLabel>& outcomes() const { return outcomes_; }
  const std::vector<double>& probabilities() const { return probabilities_; }

  double probability_of_none() const {
    double p = 0.0;
    for (std::size_t i = 0; i < outcomes_.size(); ++i)
      if (!outcomes_[i].has_reroof()) p += probabilities_[i];
    return p;
  }

  /// Expected detection accuracy when truths follow this same
  /// distribution: p_none^2 + (1 - p_none)^2.
  double expected_self_detection_accuracy() const {
    const double pn = probability_of_none();
    return pn * pn + (1.0 - pn) * (1.0 - pn);
  }

  /// Inverse-CDF draw; consumes one uniform.
  ReroofLabel sample(Rng& rng) const {
    if (!fitted()) throw PreconditionError("categorical baseline used before fitting");
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < outcomes_.size(); ++i) {
      acc += probabilities_[i];
      if (u < acc) return outcomes_[i];
    }
    return outcomes_.back();
  }

private:
  std::vector<ReroofLabel> outcomes_;
  std::vector<double> probabilities_;
};

inline ReroofLabel categorical_predict(const CategoricalModel& model, Rng& rng) {
  return model.sample(rng);
}

// ---------------------------------------------------------------------------
// Feature baselines

/// Zero-normalised cross-correlation over all pixels and channels. A
/// zero-variance input yields 0.
inline float zncc(const data::Image& a, const data::Image& b) {
  nn::require_shape(b.shape(), a.shape(), "zncc");
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0f;
  return static_cast<float>(std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0));
}

/// Mean intensity over pixels and channels, in [0, 1] for valid images.
inline float intensity_feature(const data::Image& img) {
  double s = 0.0;
  for (float v : img.values()) s += v;
  return static_cast<float>(s / static_cast<double>(img.size()));
}

enum class FeatureKind { zncc, intensity };

inline std::string to_string(FeatureKind k) { return k == FeatureKind::zncc ? "zncc" : "intensity"; }

/// Dissimilarity of an adjacent pair: 1 - zncc, or |intensity difference|.
inline double feature_score(FeatureKind kind, const data::Image& a, const data::Image& b) {
  if (kind == FeatureKind::zncc) return 1.0 - static_cast<double>(zncc(a, b));
  return std::abs(static_cast<double>(intensity_feature(a)) - intensity_feature(b));
}

/// Maps a dissimilarity score to a pseudo-probability
/// sigmoid((score - threshold) / scale).
struct FeatureThresholds {
  FeatureKind kind = FeatureKind::zncc;
  double threshold = std::numeric_limits<double>::infinity();
  double scale = 1.0;
  bool fitted = false;

  double probability(double score) const {
    if (!fitted) throw PreconditionError("feature baseline used before fitting thresholds");
    if (std::isinf(threshold)) return threshold > 0 ? 0.0 : 1.0;
    const double z = (score - threshold) / scale;
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
};

/// Class-balanced 1-D logistic regression of adjacent-pair labels on the
/// score (Newton's method, small ridge on the slope). A slope that does not
/// increase with dissimilarity leaves the threshold at +inf.
inline FeatureThresholds fit_feature_thresholds(FeatureKind kind,
                                                const std::vector<data::ImageSequence>& train) {
  std::vector<double> x;
  std::vector<double> y;
  for (const auto& seq : train) {
    if (!seq.label) throw PreconditionError(seq.building_id + ": unlabeled training sequence");
    for (std::size_t i = 1; i < seq.images.size(); ++i) {
      x.push_back(feature_score(kind, seq.images[i - 1], seq.images[i]));
      y.push_back(pairclf::pair_label(*seq.label, seq.years[i - 1], seq.years[i]));
    }
  }
  FeatureThresholds out;
  out.kind = kind;
  out.fitted = true;
  double pos = 0.0;
  for (double v : y) pos += v;
  const double neg = static_cast<double>(y.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return out;
  const double wp = static_cast<double>(y.size()) / (2.0 * pos);
  const double wn = static_cast<double>(y.size()) / (2.0 * neg);

  // Standardise the score for conditioning.
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  if (!(sd > 0.0)) return out;

  const double ridge = 1e-3;
  double w = 0.0, b = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    double gw = ridge * w, gb = 0.0, hww = ridge, hwb = 0.0, hbb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = (x[i] - mean) / sd;
      const double z = w * s + b;
      const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      const double wt = y[i] > 0.5 ? wp : wn;
      const double r = wt * (p - y[i]);
      const double h = wt * p * (1.0 - p);
      gw += r * s;
      gb += r;
      hww += h * s * s;
      hwb += h * s;
      hbb += h;
    }
    const double det = hww * hbb - hwb * hwb;
    if (!(det > 0.0)) break;
    const double dw = (hbb * gw - hwb * gb) / det;
    const double db = (hww * gb - hwb * gw) / det;
    w -= dw;
    b -= db;
    if (std::abs(dw) + std::abs(db) < 1e-10) break;
  }
  if (!(w > 0.0)) return out;
  // sigmoid(w (x - mean)/sd + b) = sigmoid((x - threshold) / scale)
  out.scale = sd / w;
  out.threshold = mean - b * sd / w;
  return out;
}

inline TransitionPrediction feature_baseline_infer(const data::ImageSequence& seq,
                                                   const FeatureThresholds& thresholds) {
  if (!thresholds.fitted) throw PreconditionError("feature baseline used before fitting thresholds");
  if (seq.images.size() < 2) {
    throw PreconditionError(seq.building_id + ": transition inference needs at least two images");
  }
  std::vector<double> probs;
  for (std::size_t i = 1; i < seq.images.size(); ++i)
    probs.push_back(thresholds.probability(feature_score(thresholds.kind, seq.images[i - 1], seq.images[i])));
  return predict_from_probabilities(seq.years, probs);
}

// ---------------------------------------------------------------------------
// Trace output: CSV rows building_id,year,p_t

inline std::string trace_csv_header() { return "building_id,year,p_t\n"; }

inline std::string trace_csv_rows(const std::string& building_id, const TransitionPrediction& pred) {
  std::string out;
  char buf[64];
  for (const auto& t : pred.trace) {
    std::snprintf(buf, sizeof buf, ",%d,%.9g\n", t.year, t.p);
    out += building_id;
    out += buf;
  }
  return out;
}

}  // namespace reroof::changepoint
