#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "reroof/changepoint.hpp"
#include "reroof/config.hpp"
#include "reroof/data/synth.hpp"
#include "reroof/evalmetrics.hpp"
#include "reroof/impact.hpp"
#include "reroof/pairclf.hpp"
#include "reroof/vae.hpp"

// Pipeline commands shared by the CLI and the tests. Every command writes
// resolved_config.json into its output directory before doing any work.
//
// Seed streams: Rng::derive(seed, k) with k = 1 VAE init, 2 VAE training,
// 3 classifier init, 4 classifier training, 5 categorical baseline.
// Per-building work is split across `workers` threads with results stored
// by index, so outputs do not depend on the worker count.

namespace reroof::pipeline {

namespace fs = std::filesystem;

enum Stream : std::uint64_t {
  kVaeInit = 1,
  kVaeTrain = 2,
  kClassifierInit = 3,
  kClassifierTrain = 4,
  kCategorical = 5,
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all threads join.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

inline void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  data::write_json_file(dir / "resolved_config.json", to_json(cfg));
}

/// Loads the split layout when splits.json is present, otherwise the flat
/// per-building layout with labels.csv.
inline data::DatasetSplit load_any_dataset(const RunConfig& cfg) {
  const fs::path root = cfg.data_root;
  if (fs::exists(root / "splits.json") || !fs::exists(root / "labels.csv")) return data::load_dataset(root);
  return data::load_flat_dataset(root, cfg.seed);
}

inline std::vector<const data::Image*> image_pointers(const std::vector<data::ImageSequence>& seqs) {
  std::vector<const data::Image*> out;
  for (const auto& s : seqs)
    for (const auto& img : s.images) out.push_back(&img);
  return out;
}

inline void require_labeled(const std::vector<data::ImageSequence>& seqs, const std::string& split) {
  for (const auto& s : seqs)
    if (!s.label) throw DatasetError(split + " building '" + s.building_id + "' has no label");
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// synth

inline data::DatasetSplit cmd_synth(const RunConfig& cfg) {
  write_resolved_config(cfg, cfg.out_dir);
  data::SynthConfig sc = cfg.synth;
  sc.seed = cfg.seed;
  sc.validate();
  const auto counts = sc.counts();
  std::vector<data::ImageSequence> seqs(sc.num_buildings);
  parallel_for(seqs.size(), cfg.workers, [&](std::size_t i) { seqs[i] = data::generate_building(sc, i); });
  data::DatasetSplit split;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto& dest = i < counts.train                      ? split.train
                 : i < counts.train + counts.validation ? split.validation
                                                        : split.test;
    dest.push_back(std::move(seqs[i]));
  }
  data::write_dataset(split, cfg.out_dir);
  return split;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutputs {
  vae::VaeTrainResult vae;
  pairclf::ClassifierTrainResult classifier;
};

inline TrainOutputs cmd_train(const RunConfig& cfg, std::FILE* progress = nullptr) {
  const fs::path out = cfg.out_dir;
  write_resolved_config(cfg, out);
  cfg.vae.validate();
  cfg.classifier.validate();
  cfg.vae_arch.validate();

  const data::DatasetSplit split = load_any_dataset(cfg);
  require_labeled(split.train, "train");
  require_labeled(split.validation, "validation");
  if (split.train.empty()) throw DatasetError("training split is empty");

  Rng vae_init = Rng::derive(cfg.seed, kVaeInit);
  Rng vae_rng = Rng::derive(cfg.seed, kVaeTrain);
  std::string vae_log = "epoch,train_recon,train_kl,val_recon,val_kl\n";
  auto vae_result = vae::train_vae(
      vae::Vae::init(cfg.vae_arch, vae_init), image_pointers(split.train), image_pointers(split.validation),
      cfg.vae, vae_rng, [&](const vae::VaeEpochLog& e) {
        vae_log += std::to_string(e.epoch) + "," + fmt(e.train.reconstruction_term) + "," +
                   fmt(e.train.kl_term) + "," + fmt(e.validation.reconstruction_term) + "," +
                   fmt(e.validation.kl_term) + "\n";
        if (progress) {
          std::fprintf(progress, "vae epoch %zu  train %.4f  val %.4f\n", e.epoch, e.train.loss(),
                       e.validation.loss());
          std::fflush(progress);
        }
      });
  data::write_text_file(out / "vae_log.csv", vae_log);
  vae::save_vae(vae_result.vae, out / "vae.ckpt");
  if (vae_result.aborted && progress) {
    std::fprintf(progress, "vae training stopped early: %s\n", vae_result.abort_reason.c_str());
  }

  const auto train_pairs = pairclf::build_pairs(split.train, vae_result.vae);
  const auto val_pairs = pairclf::build_pairs(split.validation, vae_result.vae);
  Rng clf_init = Rng::derive(cfg.seed, kClassifierInit);
  Rng clf_rng = Rng::derive(cfg.seed, kClassifierTrain);
  std::string clf_log = "epoch,train_loss,val_loss,val_accuracy\n";
  auto clf_result = pairclf::train_classifier(
      pairclf::PairClassifier::init(clf_init, cfg.classifier.dropout), train_pairs, val_pairs, cfg.classifier,
      clf_rng, [&](const pairclf::ClassifierEpochLog& e) {
        clf_log += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.validation_loss) + "," +
                   fmt(e.validation_accuracy) + "\n";
        if (progress) {
          std::fprintf(progress, "pairclf epoch %zu  train %.4f  val %.4f  acc %.3f\n", e.epoch, e.train_loss,
                       e.validation_loss, e.validation_accuracy);
          std::fflush(progress);
        }
      });
  data::write_text_file(out / "pairclf_log.csv", clf_log);
  pairclf::save_classifier(clf_result.classifier, out / "pairclf.ckpt");
  return {std::move(vae_result), std::move(clf_result)};
}

// ---------------------------------------------------------------------------
// infer / baselines

struct Predictions {
  data::LabelMap labels;
  std::string trace_csv;
};

inline void write_predictions(const Predictions& p, const fs::path& dir, bool with_trace) {
  data::write_label_map(dir / "predictions.json", p.labels);
  if (with_trace) data::write_text_file(dir / "trace.csv", p.trace_csv);
}

inline Predictions collect(const std::vector<data::ImageSequence>& seqs,
                           const std::vector<changepoint::TransitionPrediction>& preds) {
  Predictions out;
  out.trace_csv = changepoint::trace_csv_header();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.labels[seqs[i].building_id] = preds[i].predicted;
    out.trace_csv += changepoint::trace_csv_rows(seqs[i].building_id, preds[i]);
  }
  return out;
}

inline Predictions cmd_infer(const RunConfig& cfg) {
  write_resolved_config(cfg, cfg.out_dir);
  const auto model = vae::load_vae(cfg.models_path() / "vae.ckpt");
  const auto clf = pairclf::load_classifier(cfg.models_path() / "pairclf.ckpt");
  const data::DatasetSplit split = load_any_dataset(cfg);
  const auto& seqs = split.by_name(cfg.split);
  std::vector<changepoint::TransitionPrediction> preds(seqs.size());
  parallel_for(seqs.size(), cfg.workers,
               [&](std::size_t i) { preds[i] = changepoint::infer_transition(model, clf, seqs[i]); });
  auto out = collect(seqs, preds);
  write_predictions(out, cfg.out_dir, true);
  return out;
}

enum class BaselineKind { categorical, zncc, intensity };

inline BaselineKind parse_baseline_kind(const std::string& s) {
  if (s == "categorical") return BaselineKind::categorical;
  if (s == "zncc") return BaselineKind::zncc;
  if (s == "intensity") return BaselineKind::intensity;
  throw ConfigError("unknown baseline '" + s + "' (expected categorical, zncc or intensity)");
}

/// Building ids of one split in splits.json order, without decoding images.
inline std::vector<std::string> split_ids(const fs::path& root, const std::string& split) {
  const auto splits = data::read_json_file(root / "splits.json");
  if (!splits.is_object() || !splits.contains(split)) {
    throw DatasetError("splits.json has no split '" + split + "'");
  }
  std::vector<std::string> out;
  for (const auto& id : splits[split]) {
    if (!id.is_string()) throw DatasetError("splits.json: building ids must be strings");
    out.push_back(id.get<std::string>());
  }
  return out;
}

/// Truth labels for one split of a split-layout dataset, read from
/// labels.json and splits.json without decoding images.
inline data::LabelMap split_truths(const fs::path& root, const std::string& split) {
  const auto labels = data::read_label_map(root / "labels.json");
  data::LabelMap out;
  for (const auto& id : split_ids(root, split)) {
    auto it = labels.find(id);
    if (it == labels.end()) throw DatasetError("building '" + id + "' has no label");
    out[it->first] = it->second;
  }
  return out;
}

/// The categorical baseline only needs labels; with a split layout the
/// images are never decoded.
inline Predictions categorical_baseline(const RunConfig& cfg) {
  const fs::path root = cfg.data_root;
  std::vector<data::ReroofLabel> train_labels;
  std::vector<std::string> ids;
  if (fs::exists(root / "splits.json")) {
    for (const auto& [_, l] : split_truths(root, "train")) train_labels.push_back(l);
    ids = split_ids(root, cfg.split);
  } else {
    const data::DatasetSplit split = load_any_dataset(cfg);
    require_labeled(split.train, "train");
    for (const auto& s : split.train) train_labels.push_back(*s.label);
    for (const auto& s : split.by_name(cfg.split)) ids.push_back(s.building_id);
  }
  const auto model = changepoint::CategoricalModel::fit(train_labels);
  Rng rng = Rng::derive(cfg.seed, kCategorical);
  Predictions out;
  for (const auto& id : ids) out.labels[id] = changepoint::categorical_predict(model, rng);
  write_predictions(out, cfg.out_dir, false);
  return out;
}

inline Predictions cmd_baseline(BaselineKind kind, const RunConfig& cfg) {
  write_resolved_config(cfg, cfg.out_dir);
  if (kind == BaselineKind::categorical) return categorical_baseline(cfg);
  const data::DatasetSplit split = load_any_dataset(cfg);
  require_labeled(split.train, "train");
  const auto& seqs = split.by_name(cfg.split);
  const auto feature = kind == BaselineKind::zncc ? changepoint::FeatureKind::zncc
                                                  : changepoint::FeatureKind::intensity;
  const auto thresholds = changepoint::fit_feature_thresholds(feature, split.train);
  std::vector<changepoint::TransitionPrediction> preds(seqs.size());
  parallel_for(seqs.size(), cfg.workers,
               [&](std::size_t i) { preds[i] = changepoint::feature_baseline_infer(seqs[i], thresholds); });
  auto out = collect(seqs, preds);
  write_predictions(out, cfg.out_dir, true);
  return out;
}

// ---------------------------------------------------------------------------
// eval

struct EvalInputs {
  fs::path truths;                       // labels file; empty: dataset split truths
  fs::path predictions;
  std::string method;
  std::vector<fs::path> compare;         // further prediction files, table rows only
  std::vector<std::string> compare_methods;
  bool include_published = false;
};

inline std::string method_name(const fs::path& predictions) {
  const auto parent = predictions.parent_path().filename().string();
  return parent.empty() ? predictions.stem().string() : parent;
}

inline eval::EvalReport cmd_eval(const RunConfig& cfg, const EvalInputs& in) {
  write_resolved_config(cfg, cfg.out_dir);
  const data::LabelMap truths =
      in.truths.empty() ? split_truths(cfg.data_root, cfg.split) : data::read_label_map(in.truths);
  auto report = eval::evaluate(truths, data::read_label_map(in.predictions),
                               in.method.empty() ? method_name(in.predictions) : in.method);
  std::vector<eval::EvalReport> reports{report};
  for (std::size_t i = 0; i < in.compare.size(); ++i) {
    const std::string name = i < in.compare_methods.size() ? in.compare_methods[i] : method_name(in.compare[i]);
    reports.push_back(eval::evaluate(truths, data::read_label_map(in.compare[i]), name));
  }
  const auto table = eval::compare_methods(reports, in.include_published);
  const fs::path out = cfg.out_dir;
  data::write_json_file(out / "report.json", eval::to_json(report));
  data::write_text_file(out / "report.csv", table.to_csv());
  data::write_text_file(out / "report.txt", table.to_text());
  return report;
}

// ---------------------------------------------------------------------------
// impact

inline impact::ImpactResult cmd_impact(const RunConfig& cfg) {
  write_resolved_config(cfg, cfg.out_dir);
  const auto result = impact::compute_impact(cfg.impact);
  nlohmann::json j;
  j["params"] = cfg.impact;
  j["result"] = result;
  data::write_json_file(fs::path(cfg.out_dir) / "impact.json", j);
  data::write_text_file(fs::path(cfg.out_dir) / "impact.txt", impact::to_text(result));
  return result;
}

}  // namespace reroof::pipeline
