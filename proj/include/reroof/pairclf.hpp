#pragma once

#include <functional>
#include <string>
#include <vector>

#include "reroof/data/dataset.hpp"
#include "reroof/vae.hpp"

namespace reroof::pairclf {

inline constexpr std::size_t kPairInput = 2 * vae::kLatentDim;

/// Latent means of two images of one building, earlier year first.
struct PairExample {
  std::vector<float> z_a;
  std::vector<float> z_b;
  int label = 0;  // 1 = different roof
  std::string building_id;
  int year_a = 0;
  int year_b = 0;
};

/// Different roof iff the reroof year falls in (year_a, year_b].
inline int pair_label(const data::ReroofLabel& label, int year_a, int year_b) {
  if (!label.has_reroof()) return 0;
  return (year_a < label.year() && label.year() <= year_b) ? 1 : 0;
}

/// All C(n,2) ordered pairs of one building from precomputed latent means.
inline std::vector<PairExample> make_pairs(const data::ImageSequence& seq,
                                           const std::vector<std::vector<float>>& means) {
  if (!seq.label) throw PreconditionError(seq.building_id + ": cannot build pairs, unlabeled");
  if (means.size() != seq.years.size()) {
    throw DimensionError(seq.building_id + ": " + std::to_string(means.size()) +
                         " latent codes for " + std::to_string(seq.years.size()) + " images");
  }
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < seq.years.size(); ++i) {
    for (std::size_t j = i + 1; j < seq.years.size(); ++j) {
      out.push_back({means[i], means[j], pair_label(*seq.label, seq.years[i], seq.years[j]),
                     seq.building_id, seq.years[i], seq.years[j]});
    }
  }
  return out;
}

/// Latent means for every image of a sequence, encoded as one batch.
inline std::vector<std::vector<float>> embed_sequence(const vae::Vae& model,
                                                      const data::ImageSequence& seq) {
  std::vector<const data::Image*> ptrs;
  for (const auto& img : seq.images) ptrs.push_back(&img);
  auto codes = model.encode_batch(data::stack_images(ptrs));
  std::vector<std::vector<float>> means;
  means.reserve(codes.size());
  for (auto& c : codes) means.push_back(std::move(c.mu));
  return means;
}

inline std::vector<PairExample> build_pairs(const std::vector<data::ImageSequence>& sequences,
                                            const vae::Vae& model) {
  std::vector<PairExample> out;
  for (const auto& seq : sequences) {
    if (!seq.label) throw PreconditionError(seq.building_id + ": cannot build pairs, unlabeled");
    auto pairs = make_pairs(seq, embed_sequence(model, seq));
    out.insert(out.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------

inline const std::vector<std::size_t>& layer_widths() {
  static const std::vector<std::size_t> widths{kPairInput, 128, 64, 16, 1};
  return widths;
}

/// 256 -> 128 -> 64 -> 16 -> 1 MLP with ReLU and dropout after each hidden
/// layer; the single logit goes through a sigmoid.
class PairClassifier {
public:
  PairClassifier() = default;
  PairClassifier(nn::ParamStore store, double dropout = 0.5)
      : store_(std::move(store)), dropout_(dropout) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string name = "clf.fc" + std::to_string(i + 1) + ".weight";
      const nn::Shape want{layer_widths()[i], layer_widths()[i + 1]};
      if (!store_.contains(name)) throw CheckpointError("classifier parameters missing '" + name + "'");
      nn::require_shape(store_.var(name).shape(), want, name.c_str());
    }
  }

  /// He-uniform hidden layers; the output layer is zero when
  /// `zero_output` is set (every probability then starts at exactly 0.5).
  static PairClassifier init(Rng& rng, double dropout = 0.5, bool zero_output = false) {
    nn::ParamStore s;
    for (std::size_t i = 0; i < 4; ++i) {
      nn::DenseLayer<float>::create(s, "clf.fc" + std::to_string(i + 1), layer_widths()[i],
                                    layer_widths()[i + 1], rng,
                                    (i == 3 && zero_output) ? nn::Init::zero : nn::Init::he);
    }
    return PairClassifier(std::move(s), dropout);
  }

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  double dropout() const { return dropout_; }

  /// x [B, 256] -> logits [B, 1]. Dropout masks come from `rng` when training.
  nn::Var<float> logits(const nn::Var<float>& x, bool training, Rng* rng) const {
    if (x.value().rank() != 2 || x.shape()[1] != kPairInput) {
      throw DimensionError("pair classifier: expected [B,256] input, got " +
                           nn::shape_string(x.shape()));
    }
    nn::Var<float> h = x;
    for (std::size_t i = 0; i < 4; ++i) {
      h = nn::DenseLayer<float>::bind(store_, "clf.fc" + std::to_string(i + 1))(h);
      if (i < 3) h = nn::dropout(nn::relu(h), dropout_, rng, training);
    }
    return h;
  }

  /// Eval-mode probabilities for a [B, 256] batch.
  std::vector<float> probabilities(const nn::Tensor& x) const {
    nn::NoGradGuard guard;
    auto out = logits(nn::constant(x), false, nullptr);
    std::vector<float> p(out.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = stable_sigmoid(out.value()[i]);
    return p;
  }

  static float stable_sigmoid(float x) {
    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
  }

private:
  nn::ParamStore store_;
  double dropout_ = 0.5;
};

inline nn::Tensor concat_pair(std::span<const float> z_a, std::span<const float> z_b) {
  if (z_a.size() != vae::kLatentDim || z_b.size() != vae::kLatentDim) {
    throw DimensionError("classify_pair: latent codes must be 128-d, got " +
                         std::to_string(z_a.size()) + " and " + std::to_string(z_b.size()));
  }
  nn::Tensor x(nn::Shape{1, kPairInput});
  std::copy(z_a.begin(), z_a.end(), x.data());
  std::copy(z_b.begin(), z_b.end(), x.data() + vae::kLatentDim);
  return x;
}

/// Probability that the roofs differ, with the earlier image's code first.
inline float classify_pair(const PairClassifier& clf, std::span<const float> z_a,
                           std::span<const float> z_b) {
  return clf.probabilities(concat_pair(z_a, z_b)).front();
}

// ---------------------------------------------------------------------------
// Training

struct ClassifierTrainConfig {
  nn::AdamConfig adam{1e-3f};
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double dropout = 0.5;
  bool balance_classes = true;

  void validate() const {
    adam.validate();
    if (batch_size == 0) throw ConfigError("classifier: batch_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("classifier: dropout must lie in [0, 1)");
  }
};

struct ClassifierEpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

struct ClassifierTrainResult {
  PairClassifier classifier;
  std::vector<ClassifierEpochLog> log;
  std::size_t best_epoch = 0;
};

/// Per-class weights that give both classes equal total weight.
inline std::pair<float, float> class_weights(const std::vector<PairExample>& pairs, bool balance) {
  if (!balance) return {1.0f, 1.0f};
  std::size_t pos = 0;
  for (const auto& p : pairs) pos += static_cast<std::size_t>(p.label);
  const std::size_t neg = pairs.size() - pos;
  if (pos == 0 || neg == 0) return {1.0f, 1.0f};
  const double n = static_cast<double>(pairs.size());
  return {static_cast<float>(n / (2.0 * static_cast<double>(neg))),
          static_cast<float>(n / (2.0 * static_cast<double>(pos)))};
}

struct PairBatch {
  nn::Tensor inputs;
  nn::Tensor targets;
  nn::Tensor weights;
};

inline PairBatch make_batch(const std::vector<PairExample>& pairs,
                            std::span<const std::size_t> idx, std::pair<float, float> w) {
  PairBatch b{nn::Tensor(nn::Shape{idx.size(), kPairInput}), nn::Tensor(nn::Shape{idx.size(), 1}),
              nn::Tensor(nn::Shape{idx.size(), 1})};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& p = pairs[idx[r]];
    if (p.z_a.size() != vae::kLatentDim || p.z_b.size() != vae::kLatentDim) {
      throw DimensionError("pair example with non-128-d latent code");
    }
    std::copy(p.z_a.begin(), p.z_a.end(), b.inputs.data() + r * kPairInput);
    std::copy(p.z_b.begin(), p.z_b.end(), b.inputs.data() + r * kPairInput + vae::kLatentDim);
    b.targets[r] = static_cast<float>(p.label);
    b.weights[r] = p.label ? w.second : w.first;
  }
  return b;
}

struct PairMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode weighted BCE and accuracy at threshold 0.5.
inline PairMetrics evaluate_pairs(const PairClassifier& clf, const std::vector<PairExample>& pairs,
                                  std::pair<float, float> w) {
  if (pairs.empty()) return {};
  nn::NoGradGuard guard;
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto b = make_batch(pairs, idx, w);
  auto logits = clf.logits(nn::constant(b.inputs), false, nullptr);
  auto loss = nn::bce_with_logits(logits, b.targets, b.weights);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int pred = logits.value()[i] > 0.0f ? 1 : 0;
    correct += static_cast<std::size_t>(pred == pairs[i].label);
  }
  return {static_cast<double>(loss.value().item()),
          static_cast<double>(correct) / static_cast<double>(pairs.size())};
}

/// Minimises class-balanced BCE with Adam and returns the parameters from
/// the epoch with the lowest validation loss (training loss when the
/// validation set is empty). Epoch 0 in the log is the initial model.
/// Draw order per epoch: one shuffle, then dropout masks batch by batch.
inline ClassifierTrainResult train_classifier(PairClassifier initial,
                                              const std::vector<PairExample>& train,
                                              const std::vector<PairExample>& validation,
                                              const ClassifierTrainConfig& cfg, Rng& rng,
                                              const std::function<void(const ClassifierEpochLog&)>& on_epoch = {}) {
  cfg.validate();
  std::size_t pos = 0;
  for (const auto& p : train) pos += static_cast<std::size_t>(p.label);
  if (train.empty() || pos == 0 || pos == train.size()) {
    throw PreconditionError("train_classifier: training pairs must contain both classes");
  }
  const auto weights = class_weights(train, cfg.balance_classes);
  const auto val_weights = validation.empty() ? weights : class_weights(validation, cfg.balance_classes);

  ClassifierTrainResult result;
  result.classifier = std::move(initial);
  PairClassifier& clf = result.classifier;

  auto record = [&](std::size_t epoch) {
    const auto tr = evaluate_pairs(clf, train, weights);
    const auto va = validation.empty() ? tr : evaluate_pairs(clf, validation, val_weights);
    result.log.push_back({epoch, tr.loss, va.loss, va.accuracy});
    if (on_epoch) on_epoch(result.log.back());
    return va.loss;
  };

  double best = record(0);
  auto best_values = clf.store().snapshot_values();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      auto b = make_batch(train, std::span<const std::size_t>(order).subspan(start, end - start),
                          weights);
      clf.store().zero_grad();
      auto loss = nn::bce_with_logits(clf.logits(nn::constant(b.inputs), true, &rng), b.targets,
                                      b.weights);
      if (!std::isfinite(loss.value().item())) {
        throw TrainingError("non-finite classifier loss at epoch " + std::to_string(epoch));
      }
      nn::backward(loss);
      nn::adam_step(clf.store(), cfg.adam);
    }
    const double current = record(epoch);
    if (current < best) {
      best = current;
      best_values = clf.store().snapshot_values();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  clf.store().restore_values(best_values);
  return result;
}

inline void save_classifier(const PairClassifier& clf, const std::filesystem::path& path) {
  std::ostringstream dr;
  dr.precision(17);
  dr << clf.dropout();
  nn::save_params(clf.store(), path, "pairclf", {{"dropout", dr.str()}}, false);
}

inline PairClassifier load_classifier(const std::filesystem::path& path) {
  auto ck = nn::load_params(path);
  if (ck.model_kind != "pairclf") {
    throw CheckpointError(path.string() + ": expected model_kind pairclf, found " + ck.model_kind);
  }
  double dropout = 0.5;
  if (auto it = ck.meta.find("dropout"); it != ck.meta.end()) dropout = std::stod(it->second);
  return PairClassifier(std::move(ck.store), dropout);
}

}  // namespace reroof::pairclf
