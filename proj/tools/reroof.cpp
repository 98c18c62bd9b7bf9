// reroof: synthesise data, train, infer, evaluate, run baselines, and
// estimate impact. Values come from defaults, then --config, then flags.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reroof/pipeline.hpp"

namespace {

using reroof::RunConfig;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::string> data;
  std::optional<std::string> models;
  std::optional<std::string> split;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool dataset, bool models) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--workers", f.workers, "worker threads for per-building stages")->check(CLI::PositiveNumber);
  if (dataset) {
    cmd->add_option("--data", f.data, "dataset root");
    cmd->add_option("--split", f.split, "split to predict or evaluate")
        ->check(CLI::IsMember({"train", "validation", "test"}));
  }
  if (models) cmd->add_option("--models", f.models, "directory holding vae.ckpt and pairclf.ckpt");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : reroof::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  if (f.workers) c.workers = *f.workers;
  if (f.data) c.data_root = *f.data;
  if (f.models) c.models_dir = *f.models;
  if (f.split) c.split = *f.split;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Roof replacement year detection from yearly rooftop image sequences"};
  app.require_subcommand(1);
  CommonFlags common;

  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset into --out");
  add_common(synth, common, false, false);
  std::optional<std::size_t> buildings;
  std::optional<double> transition_prob;
  bool clean = false;
  synth->add_option("--buildings", buildings, "number of buildings");
  synth->add_option("--transition-prob", transition_prob, "probability that a building is reroofed")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--no-confounders", clean, "disable blur, exposure and translation jitter");

  auto* train = app.add_subcommand("train", "train the VAE and the pair classifier");
  add_common(train, common, true, false);
  std::optional<std::size_t> vae_epochs, clf_epochs, patience;
  bool quiet = false;
  train->add_option("--vae-epochs", vae_epochs, "maximum VAE epochs");
  train->add_option("--clf-epochs", clf_epochs, "maximum classifier epochs");
  train->add_option("--patience", patience, "early-stopping patience for both models");
  train->add_flag("--quiet", quiet, "no per-epoch progress on stderr");

  auto* infer = app.add_subcommand("infer", "predict reroof years for one split");
  add_common(infer, common, true, true);

  auto* evalc = app.add_subcommand("eval", "score predictions against truth labels");
  add_common(evalc, common, true, false);
  reroof::pipeline::EvalInputs eval_in;
  std::string truth, pred;
  std::vector<std::string> compare;
  evalc->add_option("--truth", truth, "truth labels JSON (default: labels of --split in --data)");
  evalc->add_option("--pred", pred, "predictions JSON")->required();
  evalc->add_option("--method", eval_in.method, "method name for the report");
  evalc->add_option("--compare", compare, "extra predictions files to tabulate");
  evalc->add_option("--compare-method", eval_in.compare_methods, "names for --compare files");
  evalc->add_flag("--published", eval_in.include_published, "append the published reference rows");

  auto* baseline = app.add_subcommand("baseline", "run a baseline predictor on one split");
  add_common(baseline, common, true, false);
  std::string kind;
  baseline->add_option("kind", kind, "categorical, zncc or intensity")
      ->required()
      ->check(CLI::IsMember({"categorical", "zncc", "intensity"}));

  auto* impactc = app.add_subcommand("impact", "estimate CO2 displacement from roof-age knowledge");
  add_common(impactc, common, false, false);
  std::optional<double> top_share, cac_share, elasticity, co2_per_percent;
  std::optional<int> horizon;
  impactc->add_option("--top-of-funnel-share", top_share);
  impactc->add_option("--cac-share", cac_share);
  impactc->add_option("--elasticity", elasticity);
  impactc->add_option("--co2-per-percent", co2_per_percent);
  impactc->add_option("--horizon", horizon);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve(common);
    if (synth->parsed()) {
      if (buildings) {
        cfg.synth.num_buildings = *buildings;
        cfg.synth.split_counts.reset();
      }
      if (transition_prob) cfg.synth.transition_probability = *transition_prob;
      if (clean) cfg.synth.without_confounders();
      const auto split = reroof::pipeline::cmd_synth(cfg);
      std::printf("wrote %zu/%zu/%zu buildings to %s\n", split.train.size(), split.validation.size(),
                  split.test.size(), cfg.out_dir.c_str());
    } else if (train->parsed()) {
      if (vae_epochs) cfg.vae.max_epochs = *vae_epochs;
      if (clf_epochs) cfg.classifier.max_epochs = *clf_epochs;
      if (patience) cfg.vae.patience = cfg.classifier.patience = *patience;
      const auto r = reroof::pipeline::cmd_train(cfg, quiet ? nullptr : stderr);
      std::printf("vae best epoch %zu, classifier best epoch %zu; checkpoints in %s\n", r.vae.best_epoch,
                  r.classifier.best_epoch, cfg.out_dir.c_str());
    } else if (infer->parsed()) {
      const auto p = reroof::pipeline::cmd_infer(cfg);
      std::printf("predicted %zu buildings into %s\n", p.labels.size(), cfg.out_dir.c_str());
    } else if (evalc->parsed()) {
      eval_in.truths = truth;
      eval_in.predictions = pred;
      for (const auto& c : compare) eval_in.compare.emplace_back(c);
      reroof::pipeline::cmd_eval(cfg, eval_in);
      std::ifstream txt(std::filesystem::path(cfg.out_dir) / "report.txt");
      std::cout << txt.rdbuf();
    } else if (baseline->parsed()) {
      const auto p = reroof::pipeline::cmd_baseline(reroof::pipeline::parse_baseline_kind(kind), cfg);
      std::printf("%s baseline predicted %zu buildings into %s\n", kind.c_str(), p.labels.size(),
                  cfg.out_dir.c_str());
    } else if (impactc->parsed()) {
      if (top_share) cfg.impact.top_of_funnel_share = *top_share;
      if (cac_share) cfg.impact.cac_share_of_cost = *cac_share;
      if (elasticity) cfg.impact.cost_to_deployment_elasticity = *elasticity;
      if (co2_per_percent) cfg.impact.annual_co2_per_percent = *co2_per_percent;
      if (horizon) cfg.impact.horizon_years = *horizon;
      std::fputs(reroof::impact::to_text(reroof::pipeline::cmd_impact(cfg)).c_str(), stdout);
    }
  } catch (const reroof::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
