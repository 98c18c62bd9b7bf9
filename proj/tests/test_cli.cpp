#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kBase = fs::temp_directory_path() / "reroof_tests" / "cli";

int run(const std::string& args) {
  const std::string cmd = std::string(REROOF_CLI) + " " + args + " >>" + (kBase / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

fs::path dir(const std::string& name) {
  auto d = kBase / name;
  fs::remove_all(d);
  return d;
}

// Every regular file under `a` exists under `b` with the same bytes.
void expect_same_tree(const fs::path& a, const fs::path& b, const std::set<std::string>& skip = {}) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || skip.count(e.path().filename().string())) continue;
    const auto rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 0u);
}

// A 20-building dataset and one trained model, shared by several tests.
class TrainedRun : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    fs::create_directories(kBase);
    data_ = dir("small_data");
    run_ = dir("small_run");
    ASSERT_EQ(run("synth --buildings 20 --seed 5 --out " + data_.string()), 0);
    ASSERT_EQ(run(train_args(run_)), 0);
  }
  static std::string train_args(const fs::path& out) {
    return "train --quiet --data " + data_.string() + " --out " + out.string() +
           " --seed 9 --vae-epochs 2 --clf-epochs 4";
  }
  static inline fs::path data_, run_;
};

}  // namespace

TEST(Synth, SameSeedGivesIdenticalTrees) {
  fs::create_directories(kBase);
  const auto a = dir("synth_a"), b = dir("synth_b");
  ASSERT_EQ(run("synth --buildings 100 --seed 7 --out " + a.string()), 0);
  ASSERT_EQ(run("synth --buildings 100 --seed 7 --out " + b.string()), 0);
  expect_same_tree(a, b, {"resolved_config.json"});
  const auto splits = read_json(a / "splits.json");
  EXPECT_EQ(splits["train"].size() + splits["validation"].size() + splits["test"].size(), 100u);
}

TEST(Synth, ZeroBuildingsGivesEmptyValidDataset) {
  fs::create_directories(kBase);
  const auto d = dir("synth_empty");
  ASSERT_EQ(run("synth --buildings 0 --out " + d.string()), 0);
  EXPECT_EQ(read_json(d / "labels.json"), json::object());
  for (const char* s : {"train", "validation", "test"}) EXPECT_TRUE(read_json(d / "splits.json")[s].empty());
}

TEST(Synth, CertainTransitionHasNoNulls) {
  fs::create_directories(kBase);
  const auto d = dir("synth_p1");
  ASSERT_EQ(run("synth --buildings 30 --transition-prob 1.0 --out " + d.string()), 0);
  const auto labels = read_json(d / "labels.json");
  EXPECT_EQ(labels.size(), 30u);
  for (const auto& [id, v] : labels.items()) EXPECT_FALSE(v.is_null()) << id;
}

TEST(Synth, BadFlagsRejected) {
  fs::create_directories(kBase);
  EXPECT_NE(run("synth --transition-prob 1.5 --out " + dir("synth_bad").string()), 0);
  EXPECT_NE(run("nonsense"), 0);
  EXPECT_NE(run(""), 0);
}

TEST_F(TrainedRun, WritesCheckpointsLogsAndConfig) {
  for (const char* f : {"vae.ckpt", "pairclf.ckpt", "vae_log.csv", "pairclf_log.csv", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(run_ / f)) << f;
  EXPECT_EQ(read_json(run_ / "resolved_config.json")["seed"], 9);
  EXPECT_EQ(slurp(run_ / "vae_log.csv").rfind("epoch,train_recon,train_kl,val_recon,val_kl\n", 0), 0u);
}

TEST_F(TrainedRun, SameSeedReproducesTraining) {
  const auto again = dir("small_run_again");
  ASSERT_EQ(run(train_args(again)), 0);
  EXPECT_EQ(slurp(run_ / "vae_log.csv"), slurp(again / "vae_log.csv"));
  EXPECT_EQ(slurp(run_ / "pairclf_log.csv"), slurp(again / "pairclf_log.csv"));
  EXPECT_EQ(slurp(run_ / "vae.ckpt"), slurp(again / "vae.ckpt"));
  EXPECT_EQ(slurp(run_ / "pairclf.ckpt"), slurp(again / "pairclf.ckpt"));
}

TEST_F(TrainedRun, InferIsRepeatableAndWorkerIndependent) {
  const auto a = dir("infer_a"), b = dir("infer_b"), c = dir("infer_c");
  const std::string common = "infer --data " + data_.string() + " --models " + run_.string();
  ASSERT_EQ(run(common + " --out " + a.string()), 0);
  ASSERT_EQ(run(common + " --out " + b.string()), 0);
  ASSERT_EQ(run(common + " --workers 3 --out " + c.string()), 0);
  EXPECT_EQ(slurp(a / "predictions.json"), slurp(b / "predictions.json"));
  EXPECT_EQ(slurp(a / "trace.csv"), slurp(b / "trace.csv"));
  EXPECT_EQ(slurp(a / "predictions.json"), slurp(c / "predictions.json"));
  EXPECT_EQ(slurp(a / "trace.csv"), slurp(c / "trace.csv"));
  const auto preds = read_json(a / "predictions.json");
  EXPECT_EQ(preds.size(), read_json(data_ / "splits.json")["test"].size());
  EXPECT_TRUE(fs::exists(a / "resolved_config.json"));
}

TEST_F(TrainedRun, CorruptedCheckpointFails) {
  const auto models = dir("corrupt_models");
  fs::create_directories(models);
  fs::copy_file(run_ / "pairclf.ckpt", models / "pairclf.ckpt");
  auto bytes = slurp(run_ / "vae.ckpt");
  bytes.resize(bytes.size() - 100);
  write_text(models / "vae.ckpt", bytes);
  EXPECT_NE(run("infer --data " + data_.string() + " --models " + models.string() + " --out " +
                dir("corrupt_out").string()),
            0);
}

TEST_F(TrainedRun, BaselinesProducePredictions) {
  for (const char* kind : {"categorical", "zncc", "intensity"}) {
    const auto out = dir(std::string("baseline_") + kind);
    ASSERT_EQ(run(std::string("baseline ") + kind + " --data " + data_.string() + " --out " + out.string()), 0);
    EXPECT_EQ(read_json(out / "predictions.json").size(), read_json(data_ / "splits.json")["test"].size());
  }
  EXPECT_NE(run("baseline median --data " + data_.string() + " --out " + dir("baseline_bad").string()), 0);
}

TEST(Train, MissingDatasetFails) {
  fs::create_directories(kBase);
  EXPECT_NE(run("train --quiet --data " + (kBase / "does_not_exist").string() + " --out " + dir("nodata").string()), 0);
  EXPECT_NE(slurp(kBase / "cli.log").find("dataset root not found"), std::string::npos);
}

TEST(Eval, FourBuildingFixture) {
  fs::create_directories(kBase);
  const auto d = dir("eval_fixture");
  write_text(d / "truth.json", R"({"A": 2015, "B": 2014, "C": 2015, "D": null})");
  write_text(d / "pred" / "predictions.json", R"({"A": 2015, "B": null, "C": 2016, "D": null})");
  ASSERT_EQ(run("eval --truth " + (d / "truth.json").string() + " --pred " + (d / "pred" / "predictions.json").string() +
                " --out " + (d / "out").string() + " --published"),
            0);
  const auto r = read_json(d / "out" / "report.json");
  EXPECT_EQ(r["detection_accuracy"], 0.75);
  EXPECT_EQ(r["avg_error_years"], 0.5);
  EXPECT_EQ(r["method"], "pred");
  const auto csv = slurp(d / "out" / "report.csv");
  EXPECT_NE(csv.find("0.872,0.680"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "out" / "report.txt"));
  EXPECT_TRUE(fs::exists(d / "out" / "resolved_config.json"));
}

TEST(Eval, MismatchedIdsFail) {
  fs::create_directories(kBase);
  const auto d = dir("eval_mismatch");
  write_text(d / "truth.json", R"({"A": 2015})");
  write_text(d / "predictions.json", R"({"B": 2015})");
  EXPECT_NE(run("eval --truth " + (d / "truth.json").string() + " --pred " + (d / "predictions.json").string() +
                " --out " + (d / "out").string()),
            0);
}

TEST(Impact, DefaultsGive750) {
  fs::create_directories(kBase);
  const auto d = dir("impact");
  ASSERT_EQ(run("impact --out " + d.string()), 0);
  const auto j = read_json(d / "impact.json");
  EXPECT_EQ(j["result"]["total_co2_mt"], 750.0);
  EXPECT_EQ(j["result"]["annual_co2_mt"], 25.0);
  EXPECT_NE(slurp(d / "impact.json").find("750.0"), std::string::npos);
  ASSERT_EQ(run("impact --cac-share 0.2 --out " + d.string()), 0);
  EXPECT_EQ(read_json(d / "impact.json")["result"]["total_co2_mt"], 1500.0);
}

TEST(Config, FileValuesAndFlagOverrides) {
  fs::create_directories(kBase);
  const auto d = dir("config");
  write_text(d / "cfg.json", R"({"seed": 4, "impact": {"horizon_years": 10}})");
  ASSERT_EQ(run("impact --config " + (d / "cfg.json").string() + " --out " + (d / "a").string()), 0);
  EXPECT_EQ(read_json(d / "a" / "impact.json")["result"]["total_co2_mt"], 250.0);
  EXPECT_EQ(read_json(d / "a" / "resolved_config.json")["seed"], 4);
  ASSERT_EQ(run("impact --config " + (d / "cfg.json").string() + " --seed 6 --horizon 20 --out " + (d / "b").string()), 0);
  EXPECT_EQ(read_json(d / "b" / "impact.json")["result"]["total_co2_mt"], 500.0);
  EXPECT_EQ(read_json(d / "b" / "resolved_config.json")["seed"], 6);
  write_text(d / "broken.json", "{ not json");
  EXPECT_NE(run("impact --config " + (d / "broken.json").string() + " --out " + (d / "c").string()), 0);
}

TEST(Baseline, CategoricalMonteCarloOverSeeds) {
  // Labels only: the categorical baseline never touches the images. Train
  // and test share the same label proportions (20% no reroof), so the
  // expected accuracy is 0.2^2 + 0.8^2 = 0.68.
  fs::create_directories(kBase);
  const auto d = dir("categorical_mc");
  json labels = json::object(), splits{{"train", json::array()}, {"validation", json::array()}, {"test", json::array()}};
  auto add = [&](const std::string& split, int n) {
    for (int i = 0; i < n; ++i) {
      const std::string id = split + std::to_string(i);
      labels[id] = i % 5 == 0 ? json(nullptr) : json(2013 + i % 6);
      splits[split].push_back(id);
    }
  };
  add("train", 100);
  add("test", 50);
  write_text(d / "data" / "labels.json", labels.dump());
  write_text(d / "data" / "splits.json", splits.dump());
  const int seeds = 1000;
  double sum = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto out = d / "run";
    ASSERT_EQ(run("baseline categorical --data " + (d / "data").string() + " --seed " + std::to_string(s) +
                  " --out " + out.string()),
              0);
    ASSERT_EQ(run("eval --data " + (d / "data").string() + " --pred " + (out / "predictions.json").string() +
                  " --out " + (d / "ev").string()),
              0);
    sum += read_json(d / "ev" / "report.json")["detection_accuracy"].get<double>();
  }
  // Per-seed variance: 10 none buildings hit w.p. 0.2, 40 reroofs w.p. 0.8.
  const double var = (10 * 0.2 * 0.8 + 40 * 0.8 * 0.2) / (50.0 * 50.0);
  EXPECT_NEAR(sum / seeds, 0.68, 3 * std::sqrt(var / seeds));
}
