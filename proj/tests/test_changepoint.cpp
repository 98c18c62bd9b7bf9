#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "reroof/changepoint.hpp"
#include "reroof/data/synth.hpp"

namespace cp = reroof::changepoint;
namespace data = reroof::data;
using data::Image;
using data::ReroofLabel;
using reroof::Rng;

namespace {

std::vector<int> years_2012_2018() { return {2012, 2013, 2014, 2015, 2016, 2017, 2018}; }

Image noise_image(Rng& rng) {
  Image img = data::make_image(64, 64);
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

data::ImageSequence constant_sequence(float before, float after, int change_year) {
  data::ImageSequence s;
  s.building_id = "c";
  s.label = change_year ? ReroofLabel::at(change_year) : ReroofLabel::none();
  for (int y = 2012; y <= 2018; ++y) {
    s.years.push_back(y);
    s.images.push_back(data::make_image(64, 64, change_year && y >= change_year ? after : before));
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// decision rule

TEST(Decide, ArgmaxOfExampleTrace) {
  auto p = cp::predict_from_probabilities(years_2012_2018(), {0.1, 0.2, 0.6, 0.9, 0.3, 0.2});
  EXPECT_EQ(p.predicted, ReroofLabel::at(2016));
  ASSERT_EQ(p.trace.size(), 6u);
  EXPECT_EQ(p.trace.front().year, 2013);
  EXPECT_EQ(p.trace.back().year, 2018);
}

TEST(Decide, AllBelowThresholdIsNone) {
  auto p = cp::predict_from_probabilities(years_2012_2018(), std::vector<double>(6, 0.49));
  EXPECT_EQ(p.predicted, ReroofLabel::none());
}

TEST(Decide, TiesGoToEarliestYear) {
  auto p = cp::predict_from_probabilities(years_2012_2018(), {0.7, 0.7, 0.1, 0.1, 0.1, 0.1});
  EXPECT_EQ(p.predicted, ReroofLabel::at(2013));
  p = cp::predict_from_probabilities(years_2012_2018(), {0.1, 0.5, 0.1, 0.5, 0.1, 0.1});
  EXPECT_EQ(p.predicted, ReroofLabel::at(2014));
}

TEST(Decide, RandomTracesAgreeWithDirectRule) {
  Rng rng(1);
  for (int t = 0; t < 5000; ++t) {
    std::vector<double> trace(6);
    // Coarse values make ties common.
    for (auto& v : trace) v = static_cast<double>(rng.below(11)) / 10.0;
    auto p = cp::predict_from_probabilities(years_2012_2018(), trace);
    double best = -1.0;
    int best_year = 0;
    for (int i = 0; i < 6; ++i)
      if (trace[i] > best) best = trace[i], best_year = 2013 + i;
    const ReroofLabel want = best < 0.5 ? ReroofLabel::none() : ReroofLabel::at(best_year);
    ASSERT_EQ(p.predicted, want);
    if (p.predicted.has_reroof()) EXPECT_GE(trace[p.predicted.year() - 2013], 0.5);
  }
}

TEST(Decide, ShortOrMismatchedInputRejected) {
  EXPECT_THROW(cp::predict_from_probabilities({2012}, {}), reroof::PreconditionError);
  EXPECT_THROW(cp::predict_from_probabilities(years_2012_2018(), {0.1, 0.2}), reroof::DimensionError);
}

TEST(Infer, EndToEndWithUntrainedModels) {
  Rng rng(2);
  auto model = reroof::vae::Vae::init(reroof::vae::VaeArch{{4, 4, 4, 4}, 1}, rng);
  auto clf = reroof::pairclf::PairClassifier::init(rng, 0.5, true);
  data::SynthConfig cfg;
  auto seq = data::generate_building(cfg, 0);
  auto p = cp::infer_transition(model, clf, seq);
  ASSERT_EQ(p.trace.size(), 6u);
  for (const auto& t : p.trace) EXPECT_EQ(t.p, 0.5);
  // Every p_t is exactly 0.5: the threshold is met and the earliest year wins.
  EXPECT_EQ(p.predicted, ReroofLabel::at(2013));

  seq.images.resize(1);
  seq.years.resize(1);
  EXPECT_THROW(cp::infer_transition(model, clf, seq), reroof::PreconditionError);
}

TEST(Trace, CsvRows) {
  auto p = cp::predict_from_probabilities({2012, 2013, 2014}, {0.25, 0.75});
  EXPECT_EQ(cp::trace_csv_header(), "building_id,year,p_t\n");
  const auto rows = cp::trace_csv_rows("b7", p);
  EXPECT_NE(rows.find("b7,2013,0.25"), std::string::npos);
  EXPECT_NE(rows.find("b7,2014,0.75"), std::string::npos);
}

// ---------------------------------------------------------------------------
// categorical baseline

TEST(Categorical, AllNoneAlwaysPredictsNone) {
  auto m = cp::CategoricalModel::fit(std::vector<ReroofLabel>(10, ReroofLabel::none()));
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(cp::categorical_predict(m, rng), ReroofLabel::none());
}

TEST(Categorical, FitIsEmpiricalDistribution) {
  std::vector<ReroofLabel> labels{ReroofLabel::none(), ReroofLabel::at(2015), ReroofLabel::at(2015),
                                  ReroofLabel::at(2016)};
  auto m = cp::CategoricalModel::fit(labels);
  ASSERT_EQ(m.outcomes().size(), 3u);
  double total = 0.0;
  for (double p : m.probabilities()) total += p;
  EXPECT_DOUBLE_EQ(total, 1.0);
  EXPECT_DOUBLE_EQ(m.probability_of_none(), 0.25);
  EXPECT_THROW(cp::CategoricalModel::fit({}), reroof::PreconditionError);
}

TEST(Categorical, UnfittedModelRejected) {
  cp::CategoricalModel m;
  Rng rng(4);
  EXPECT_THROW(cp::categorical_predict(m, rng), reroof::PreconditionError);
}

TEST(Categorical, SelfDistributionDetectionAccuracy) {
  auto m = cp::CategoricalModel::from_distribution(
      {ReroofLabel::none(), ReroofLabel::at(2015), ReroofLabel::at(2016)}, {0.2, 0.5, 0.3});
  EXPECT_NEAR(m.expected_self_detection_accuracy(), 0.68, 1e-12);
  Rng truth(5), guess(6);
  const std::size_t n = 100000;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = m.sample(truth);
    const auto g = cp::categorical_predict(m, guess);
    hits += t.has_reroof() == g.has_reroof();
  }
  const double acc = static_cast<double>(hits) / n;
  EXPECT_NEAR(acc, 0.68, 3 * std::sqrt(0.68 * 0.32 / n));
}

TEST(Categorical, MillionDrawFrequencies) {
  const std::vector<double> probs{0.2, 0.5, 0.3};
  auto m = cp::CategoricalModel::from_distribution(
      {ReroofLabel::none(), ReroofLabel::at(2015), ReroofLabel::at(2016)}, probs);
  Rng rng(7);
  const std::size_t n = 1000000;
  std::map<std::optional<int>, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) ++counts[cp::categorical_predict(m, rng).maybe_year()];
  const std::vector<std::optional<int>> keys{std::nullopt, 2015, 2016};
  for (std::size_t k = 0; k < 3; ++k) {
    const double f = static_cast<double>(counts[keys[k]]) / n;
    EXPECT_NEAR(f, probs[k], 3 * std::sqrt(probs[k] * (1 - probs[k]) / n)) << k;
  }
}

TEST(Categorical, ChiSquareGoodnessOfFit) {
  // Seven outcomes, six degrees of freedom; chi2_{0.99}(6) = 16.812.
  const std::vector<double> probs{0.22, 0.08, 0.1, 0.15, 0.2, 0.13, 0.12};
  std::vector<ReroofLabel> outcomes{ReroofLabel::none()};
  for (int y = 2013; y <= 2018; ++y) outcomes.push_back(ReroofLabel::at(y));
  auto m = cp::CategoricalModel::from_distribution(outcomes, probs);
  Rng rng(8);
  const std::size_t n = 100000;
  std::vector<double> counts(7, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = cp::categorical_predict(m, rng);
    counts[d.has_reroof() ? static_cast<std::size_t>(d.year() - 2012) : 0] += 1.0;
  }
  double chi2 = 0.0;
  for (std::size_t k = 0; k < 7; ++k) {
    const double e = probs[k] * n;
    chi2 += (counts[k] - e) * (counts[k] - e) / e;
  }
  EXPECT_LT(chi2, 16.812);
}

TEST(Categorical, BadDistributionRejected) {
  EXPECT_THROW(cp::CategoricalModel::from_distribution({ReroofLabel::none()}, {0.9}), reroof::PreconditionError);
  EXPECT_THROW(cp::CategoricalModel::from_distribution({ReroofLabel::none(), ReroofLabel::at(2014)}, {1.2, -0.2}),
               reroof::PreconditionError);
}

// ---------------------------------------------------------------------------
// image features

TEST(Zncc, IdenticalAndNegated) {
  Rng rng(9);
  Image a = noise_image(rng);
  EXPECT_NEAR(cp::zncc(a, a), 1.0f, 1e-6);
  Image neg = a;
  for (auto& v : neg.values()) v = 1.0f - v;
  EXPECT_NEAR(cp::zncc(a, neg), -1.0f, 1e-6);
}

TEST(Zncc, IndependentNoiseIsUncorrelated) {
  Rng rng(10);
  int small = 0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) small += std::abs(cp::zncc(noise_image(rng), noise_image(rng))) < 0.05f;
  EXPECT_GT(static_cast<double>(small) / trials, 0.99);
}

TEST(Zncc, SymmetricAndAffineInvariant) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    Image a = noise_image(rng), b = noise_image(rng);
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = 0.5f * b[i] + 0.5f * a[i];
    const float r = cp::zncc(a, b);
    EXPECT_NEAR(r, cp::zncc(b, a), 1e-6);
    const float alpha = static_cast<float>(rng.uniform(0.2, 3.0));
    const float beta = static_cast<float>(rng.uniform(-1.0, 1.0));
    Image a2 = a;
    for (auto& v : a2.values()) v = alpha * v + beta;
    EXPECT_NEAR(cp::zncc(a2, b), r, 1e-5);
    EXPECT_NEAR(cp::zncc(b, a2), r, 1e-5);
  }
}

TEST(Zncc, ConstantImageGivesZero) {
  Rng rng(12);
  EXPECT_EQ(cp::zncc(data::make_image(64, 64, 0.3f), noise_image(rng)), 0.0f);
  EXPECT_EQ(cp::zncc(data::make_image(64, 64, 0.3f), data::make_image(64, 64, 0.3f)), 0.0f);
}

TEST(Zncc, ShapeMismatchRejected) {
  EXPECT_THROW(cp::zncc(data::make_image(64, 64), data::make_image(32, 32)), reroof::DimensionError);
}

TEST(Intensity, ConstantImages) {
  EXPECT_EQ(cp::intensity_feature(data::make_image(64, 64, 0.0f)), 0.0f);
  EXPECT_EQ(cp::intensity_feature(data::make_image(64, 64, 1.0f)), 1.0f);
  EXPECT_FLOAT_EQ(cp::intensity_feature(data::make_image(64, 64, 0.25f)), 0.25f);
}

// ---------------------------------------------------------------------------
// feature baselines

TEST(FeatureBaseline, IdenticalImagesPredictNone) {
  std::vector<data::ImageSequence> train{constant_sequence(0.2f, 0.8f, 2015), constant_sequence(0.3f, 0.7f, 2017),
                                         constant_sequence(0.5f, 0.5f, 0)};
  auto th = cp::fit_feature_thresholds(cp::FeatureKind::intensity, train);
  ASSERT_TRUE(th.fitted);
  Rng rng(13);
  data::ImageSequence same;
  Image img = noise_image(rng);
  for (int y = 2012; y <= 2018; ++y) {
    same.years.push_back(y);
    same.images.push_back(img);
  }
  EXPECT_EQ(cp::feature_baseline_infer(same, th).predicted, ReroofLabel::none());
}

TEST(FeatureBaseline, IntensityFindsStepChange) {
  std::vector<data::ImageSequence> train{constant_sequence(0.2f, 0.8f, 2015), constant_sequence(0.3f, 0.7f, 2017),
                                         constant_sequence(0.5f, 0.5f, 0), constant_sequence(0.6f, 0.1f, 2014)};
  auto th = cp::fit_feature_thresholds(cp::FeatureKind::intensity, train);
  EXPECT_EQ(cp::feature_baseline_infer(constant_sequence(0.1f, 0.9f, 2016), th).predicted, ReroofLabel::at(2016));
}

TEST(FeatureBaseline, ZnccFindsCleanSyntheticTransition) {
  data::SynthConfig cfg;
  cfg.transition_probability = 0.7;
  cfg.without_confounders();
  cfg.seed = 14;
  std::vector<data::ImageSequence> train;
  for (std::size_t i = 0; i < 20; ++i) train.push_back(data::generate_building(cfg, i));
  auto th = cp::fit_feature_thresholds(cp::FeatureKind::zncc, train);
  ASSERT_TRUE(std::isfinite(th.threshold));
  cfg.transition_probability = 1.0;
  for (std::size_t i = 100; i < 110; ++i) {
    auto seq = data::generate_building(cfg, i);
    EXPECT_EQ(cp::feature_baseline_infer(seq, th).predicted, *seq.label) << i;
  }
}

TEST(FeatureBaseline, InfiniteThresholdNeverFires) {
  cp::FeatureThresholds th;
  th.kind = cp::FeatureKind::intensity;
  th.fitted = true;
  EXPECT_TRUE(std::isinf(th.threshold));
  EXPECT_EQ(cp::feature_baseline_infer(constant_sequence(0.0f, 1.0f, 2014), th).predicted, ReroofLabel::none());
}

TEST(FeatureBaseline, UnfittedRejected) {
  cp::FeatureThresholds th;
  EXPECT_THROW(cp::feature_baseline_infer(constant_sequence(0.0f, 1.0f, 2014), th), reroof::PreconditionError);
}
