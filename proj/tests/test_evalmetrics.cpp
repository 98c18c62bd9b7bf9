#include <cmath>

#include <gtest/gtest.h>

#include "reroof/changepoint.hpp"
#include "reroof/evalmetrics.hpp"

namespace ev = reroof::eval;
using reroof::Rng;
using reroof::data::LabelMap;
using reroof::data::ReroofLabel;

namespace {

LabelMap fixture_truths() {
  return {{"A", ReroofLabel::at(2015)}, {"B", ReroofLabel::at(2014)}, {"C", ReroofLabel::at(2015)},
          {"D", ReroofLabel::none()}};
}

LabelMap fixture_predictions() {
  return {{"A", ReroofLabel::at(2015)}, {"B", ReroofLabel::none()}, {"C", ReroofLabel::at(2016)},
          {"D", ReroofLabel::none()}};
}

}  // namespace

TEST(Evaluate, FourBuildingFixture) {
  auto r = ev::evaluate(fixture_truths(), fixture_predictions(), "m");
  EXPECT_DOUBLE_EQ(r.detection_accuracy, 0.75);
  ASSERT_TRUE(r.avg_error_years.has_value());
  EXPECT_DOUBLE_EQ(*r.avg_error_years, 0.5);
  EXPECT_EQ(r.n_buildings, 4u);
  EXPECT_EQ(r.n_correct_detections, 3u);
  EXPECT_EQ(r.n_reroof_correct, 2u);
}

TEST(Evaluate, IdentityIsPerfect) {
  auto r = ev::evaluate(fixture_truths(), fixture_truths());
  EXPECT_EQ(r.detection_accuracy, 1.0);
  EXPECT_EQ(r.avg_error_years, 0.0);
}

TEST(Evaluate, NoQualifyingBuildingGivesNullError) {
  LabelMap truths{{"A", ReroofLabel::at(2015)}, {"B", ReroofLabel::none()}};
  LabelMap preds{{"A", ReroofLabel::none()}, {"B", ReroofLabel::none()}};
  auto r = ev::evaluate(truths, preds);
  EXPECT_FALSE(r.avg_error_years.has_value());
  EXPECT_TRUE(ev::to_json(r)["avg_error_years"].is_null());
  EXPECT_NE(ev::compare_methods({r}).to_csv().find(",null"), std::string::npos);
}

TEST(Evaluate, IdMismatchRejected) {
  auto preds = fixture_predictions();
  preds.erase("D");
  EXPECT_THROW(ev::evaluate(fixture_truths(), preds), reroof::PreconditionError);
  preds = fixture_predictions();
  preds["E"] = ReroofLabel::none();
  EXPECT_THROW(ev::evaluate(fixture_truths(), preds), reroof::PreconditionError);
  EXPECT_THROW(ev::evaluate({}, {}), reroof::PreconditionError);
}

TEST(Evaluate, RandomLabelProperties) {
  Rng rng(1);
  auto draw = [&] { return rng.below(3) == 0 ? ReroofLabel::none() : ReroofLabel::at(2013 + static_cast<int>(rng.below(6))); };
  for (int t = 0; t < 200; ++t) {
    LabelMap truths, preds, renamed_t, renamed_p;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = "b" + std::to_string(i);
      truths[id] = draw();
      preds[id] = draw();
      // Same pairs under ids that sort in a different order.
      const std::string alt = std::to_string(n - i) + "x";
      renamed_t[alt] = truths[id];
      renamed_p[alt] = preds[id];
    }
    auto r = ev::evaluate(truths, preds);
    auto s = ev::evaluate(renamed_t, renamed_p);
    EXPECT_EQ(r.detection_accuracy, s.detection_accuracy);
    EXPECT_EQ(r.avg_error_years, s.avg_error_years);
    EXPECT_GE(r.detection_accuracy, 0.0);
    EXPECT_LE(r.detection_accuracy, 1.0);
    if (r.avg_error_years) {
      EXPECT_GE(*r.avg_error_years, 0.0);
      EXPECT_LE(*r.avg_error_years, 2018 - 2012);
    }
    std::size_t correct = 0;
    for (const auto& rec : r.records) correct += rec.truth.has_reroof() == rec.prediction.has_reroof();
    EXPECT_EQ(static_cast<double>(correct) / static_cast<double>(r.records.size()), r.detection_accuracy);
  }
}

TEST(Evaluate, CategoricalSelfDistributionMonteCarlo) {
  auto m = reroof::changepoint::CategoricalModel::from_distribution(
      {ReroofLabel::none(), ReroofLabel::at(2014), ReroofLabel::at(2016)}, {0.35, 0.4, 0.25});
  const double expected = m.expected_self_detection_accuracy();
  EXPECT_NEAR(expected, 0.35 * 0.35 + 0.65 * 0.65, 1e-12);
  Rng truth_rng(2), guess_rng(3);
  const std::size_t sets = 10000, size = 55;
  double sum = 0.0;
  for (std::size_t s = 0; s < sets; ++s) {
    LabelMap truths, preds;
    for (std::size_t i = 0; i < size; ++i) {
      const std::string id = std::to_string(i);
      truths[id] = m.sample(truth_rng);
      preds[id] = reroof::changepoint::categorical_predict(m, guess_rng);
    }
    sum += ev::evaluate(truths, preds).detection_accuracy;
  }
  const double sigma = std::sqrt(expected * (1 - expected) / static_cast<double>(sets * size));
  EXPECT_NEAR(sum / sets, expected, 3 * sigma);
}

TEST(Report, JsonRoundTrip) {
  auto r = ev::evaluate(fixture_truths(), fixture_predictions(), "vae");
  auto j = ev::to_json(r);
  EXPECT_EQ(j["schema_version"], ev::kReportSchemaVersion);
  auto back = ev::report_from_json(j);
  EXPECT_EQ(back.method, "vae");
  EXPECT_EQ(back.detection_accuracy, r.detection_accuracy);
  EXPECT_EQ(back.avg_error_years, r.avg_error_years);
  ASSERT_EQ(back.records.size(), 4u);
  EXPECT_EQ(back.records[2].abs_error, 1);
  EXPECT_FALSE(back.records[1].abs_error.has_value());
  j["schema_version"] = 99;
  EXPECT_THROW(ev::report_from_json(j), reroof::PreconditionError);
}

TEST(Compare, SingleReportOneRow) {
  auto t = ev::compare_methods({ev::evaluate(fixture_truths(), fixture_predictions(), "vae")});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.to_csv(), "method,detection_accuracy,avg_error_years\nvae,0.750,0.500\n");
  EXPECT_THROW(ev::compare_methods({}), reroof::PreconditionError);
}

TEST(Compare, PublishedRowsCarryReferenceValues) {
  auto t = ev::compare_methods({ev::evaluate(fixture_truths(), fixture_predictions(), "vae")}, true);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_TRUE(t.rows[1].published);
  EXPECT_EQ(t.rows[1].detection_accuracy, 0.872);
  EXPECT_EQ(t.rows[1].avg_error_years, 0.680);
  EXPECT_EQ(t.rows[2].detection_accuracy, 0.648);
  EXPECT_EQ(t.rows[2].avg_error_years, 1.868);
  const auto text = t.to_text();
  for (const char* s : {"0.872", "0.680", "0.648", "1.868", "published"})
    EXPECT_NE(text.find(s), std::string::npos) << s;
  const auto csv = t.to_csv();
  EXPECT_NE(csv.find("0.872,0.680"), std::string::npos);
  EXPECT_NE(csv.find("0.648,1.868"), std::string::npos);
}
