#include <cap/synth.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace cap;

TEST(Synthetic, MixtureHitsBaseRate) {
  SyntheticSpec s;
  s.n_cal = 100000;
  s.n_test = 1;
  const auto d = generate(s);
  double mean_p = 0.0, mean_y = 0.0;
  for (const auto& r : d.cal) {
    mean_p += sigmoid(r.logit) / 100000.0;
    mean_y += r.label / 100000.0;
  }
  EXPECT_NEAR(mean_p, 0.045, 0.002);
  EXPECT_NEAR(mean_y, 0.045, 0.003);
  EXPECT_NEAR(s.binder_weight() * s.binder_mean() + (1 - s.binder_weight()) * s.background_mean(), 0.045, 1e-15);
}

TEST(Synthetic, MiscalibrationScalesLogits) {
  SyntheticSpec a, b;
  a.n_cal = b.n_cal = 50;
  a.n_test = b.n_test = 10;
  b.miscalibration_temperature = 3.0;
  const auto da = generate(a), db = generate(b);
  for (std::size_t i = 0; i < da.cal.size(); ++i) {
    EXPECT_NEAR(db.cal[i].logit, 3.0 * da.cal[i].logit, 1e-9 * std::abs(da.cal[i].logit) + 1e-12);
    EXPECT_EQ(db.cal[i].label, da.cal[i].label);
  }
  EXPECT_EQ(da.test.front().example_id, "test0");
}

TEST(Synthetic, SeedDeterminism) {
  SyntheticSpec s;
  s.n_cal = 200;
  s.n_test = 200;
  s.seed = 17;
  const auto a = generate(s), b = generate(s);
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(a.test[i].logit, b.test[i].logit);
  const auto x = coverage_experiment(s, 0.2, 8), y = coverage_experiment(s, 0.2, 8);
  EXPECT_EQ(x.mean_coverage, y.mean_coverage);
  EXPECT_EQ(x.mean_temperature, y.mean_temperature);
}

TEST(Synthetic, ValidationErrors) {
  SyntheticSpec s;
  s.base_positive_rate = 0.9;  // above the binder mean
  EXPECT_THROW(s.validate(), ContractError);
  SyntheticSpec t;
  t.miscalibration_temperature = 0.0;
  EXPECT_THROW(t.validate(), ContractError);
  SyntheticSpec u;
  EXPECT_THROW(coverage_experiment(u, 0.2, 0), ContractError);
}

TEST(CoverageExperiment, TinyCalibrationSetRetainsAll) {
  SyntheticSpec s;
  s.n_cal = 1;
  s.n_test = 200;
  const auto r = coverage_experiment(s, 0.2, 5);
  EXPECT_EQ(r.retain_all_trials, 5u);
  EXPECT_DOUBLE_EQ(r.mean_coverage, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_retention, 1.0);
}

TEST(CoverageExperiment, SingleTrialHasZeroSd) {
  SyntheticSpec s;
  s.n_cal = 300;
  s.n_test = 300;
  const auto r = coverage_experiment(s, 0.2, 1);
  EXPECT_EQ(r.sd, 0.0);
  EXPECT_EQ(r.standard_error(), 0.0);
  EXPECT_EQ(r.trials.size(), 1u);
}

TEST(CoverageExperiment, CoverageNearTarget) {
  SyntheticSpec s;
  s.n_cal = 500;
  s.n_test = 1000;
  s.miscalibration_temperature = 2.0;
  const auto r = coverage_experiment(s, 0.1, 100);
  EXPECT_GE(r.mean_coverage, 0.9 - 4 * r.standard_error());
  EXPECT_LE(r.mean_coverage, 0.9 + 1.0 / 501 + 4 * r.standard_error());
  EXPECT_LT(r.mean_ece_after, r.mean_ece_before);
  EXPECT_NEAR(r.mean_temperature, 2.0, 0.3);
}

TEST(SizeSweep, RowsAndCsv) {
  SyntheticSpec s;
  s.n_test = 500;
  s.miscalibration_temperature = 3.0;
  const auto rows = calibration_size_sweep(s, {100, 400}, 0.2, 10);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].n_cal, 100u);
  std::ostringstream out;
  write_size_sweep_csv(out, rows);
  const auto text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "n_cal,mean_ece_after,mean_coverage,mean_ece_before,mean_retention,coverage_sd,retain_all_trials");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_THROW(calibration_size_sweep(s, {}, 0.2, 1), ContractError);
}
