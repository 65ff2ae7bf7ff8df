#include <cap/conformal.hpp>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace cap;

TEST(Nonconformity, Examples) {
  EXPECT_NEAR(nonconformity_calibration(0.9, 1), 0.1, 1e-15);
  EXPECT_NEAR(nonconformity_calibration(0.9, 0), 0.9, 1e-15);
  EXPECT_NEAR(nonconformity_test(0.05), 0.05, 1e-15);
  EXPECT_NEAR(nonconformity_test(0.95), 0.05, 1e-15);
  EXPECT_EQ(nonconformity_test(0.5), 0.5);
  EXPECT_NEAR(nonconformity_test(0.9), 0.1, 1e-15);
  EXPECT_EQ(nonconformity_calibration(0.5, 0), 0.5);
  EXPECT_EQ(nonconformity_calibration(0.5, 1), 0.5);
  EXPECT_EQ(predicted_label(0.5), 1);
  EXPECT_EQ(predicted_label(0.4999), 0);
}

TEST(FitThreshold, Examples) {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const auto r = fit_threshold(s, 0.2);
  EXPECT_EQ(r.quantile_index, 9);
  ASSERT_TRUE(r.threshold);
  EXPECT_EQ(*r.threshold, 0.9);

  const std::vector<double> nine(9, 0.3);
  const auto all = fit_threshold(nine, 0.05);
  EXPECT_TRUE(all.retain_all());
  EXPECT_TRUE(all.warning());
  EXPECT_TRUE(all.retains(1.0));
  EXPECT_EQ(all.to_json()["threshold"], "RETAIN_ALL");

  const auto c = fit_threshold(std::vector<double>(50, 0.25), 0.1);
  ASSERT_TRUE(c.threshold);
  EXPECT_EQ(*c.threshold, 0.25);
}

TEST(FitThreshold, ExactQuantileIndexIsNotRoundedUp) {
  // (1 - 0.2)(9 + 1) = 8 exactly in real arithmetic, 8.000000000000002 in doubles.
  EXPECT_EQ(conformal_quantile_index(0.2, 9), 8);
  EXPECT_EQ(conformal_quantile_index(0.1, 9), 9);
  EXPECT_EQ(conformal_quantile_index(0.05, 19), 19);
}

TEST(FitThreshold, Errors) {
  EXPECT_THROW(fit_threshold(std::vector<double>{}, 0.1), ContractError);
  EXPECT_THROW(fit_threshold(std::vector<double>{0.1}, 0.0), ContractError);
  EXPECT_THROW(fit_threshold(std::vector<double>{0.1}, 1.0), ContractError);
}

TEST(FitThreshold, MatchesEnumerationOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    const double eps = 0.01 + 0.98 * uniform01(rng);
    std::vector<double> s(n);
    const bool ties = trial % 2 == 0;
    for (auto& v : s) v = ties ? static_cast<double>(uniform_index(rng, 10)) / 10.0 : uniform01(rng);
    const auto rule = fit_threshold(s, eps);
    const auto oracle = fixtures::threshold_by_enumeration(s, eps);
    ASSERT_EQ(rule.threshold.has_value(), oracle.has_value()) << "n=" << n << " eps=" << eps;
    if (oracle) {
      ASSERT_EQ(*rule.threshold, *oracle);
    }
  }
}

TEST(FitThreshold, MonotoneInEpsilon) {
  Rng rng(3);
  std::vector<double> s(300);
  for (auto& v : s) v = uniform01(rng);
  double prev = 2.0;
  for (double eps = 0.01; eps < 0.99; eps += 0.01) {
    const auto r = fit_threshold(s, eps);
    const double t = r.threshold ? *r.threshold : 2.0;
    EXPECT_LE(t, prev) << eps;
    prev = t;
  }
}

TEST(FitThreshold, PermutationInvariant) {
  Rng rng(5);
  std::vector<double> s(101);
  for (auto& v : s) v = uniform01(rng);
  const auto a = fit_threshold(s, 0.15);
  shuffle(s, rng);
  EXPECT_EQ(*a.threshold, *fit_threshold(s, 0.15).threshold);
}

TEST(FitThreshold, MarginalCoverageMatchesRankFormula) {
  // With continuous exchangeable scores P(s_test <= τ) = k / (n + 1) exactly.
  const std::size_t n = 20, trials = 40000;
  const double eps = 0.1;
  Rng rng(6);
  std::size_t covered = 0;
  std::vector<double> s(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& v : s) v = uniform01(rng);
    const auto r = fit_threshold(s, eps);
    covered += r.retains(uniform01(rng)) ? 1 : 0;
  }
  const double mean = static_cast<double>(covered) / trials;
  const double expected = 19.0 / 21.0;
  EXPECT_GE(expected, 1 - eps);
  EXPECT_LE(expected, 1 - eps + 1.0 / (n + 1));
  EXPECT_NEAR(mean, expected, 4 * std::sqrt(expected * (1 - expected) / trials));
}

TEST(Decide, ReferenceCases) {
  ConformalRule rule;
  rule.threshold = 0.1;
  const auto a = decide_one({"a", 0.95}, rule);
  EXPECT_TRUE(a.retained());
  EXPECT_EQ(a.predicted, 1);
  EXPECT_FALSE(decide_one({"b", 0.6}, rule).retained());
  const auto c = decide_one({"c", 0.5 + 1e-9}, ConformalRule{});
  EXPECT_TRUE(c.retained());
  EXPECT_EQ(c.predicted, 1);
}

TEST(Decide, PermutationPermutesDecisions) {
  Rng rng(8);
  std::vector<CalibratedPrediction> recs;
  for (int i = 0; i < 200; ++i) recs.push_back({"r" + std::to_string(i), uniform01(rng)});
  ConformalRule rule;
  rule.threshold = 0.3;
  const auto fwd = decide(recs, rule);
  std::reverse(recs.begin(), recs.end());
  const auto rev = decide(recs, rule);
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    EXPECT_EQ(fwd[i].example_id, rev[fwd.size() - 1 - i].example_id);
    EXPECT_EQ(fwd[i].decision, rev[fwd.size() - 1 - i].decision);
  }
}

TEST(Decide, Examples) {
  ConformalRule rule;
  rule.threshold = 0.2;
  const std::vector<CalibratedPrediction> recs{{"a", 0.9}, {"b", 0.7}, {"c", 0.15}, {"d", 0.8}};
  const auto d = decide(recs, rule);
  EXPECT_TRUE(d[0].retained());
  EXPECT_EQ(d[0].predicted, 1);
  EXPECT_FALSE(d[1].retained());
  EXPECT_EQ(d[1].predicted, -1);
  EXPECT_TRUE(d[2].retained());
  EXPECT_EQ(d[2].predicted, 0);
  EXPECT_TRUE(d[3].retained());
  ConformalRule all;
  for (const auto& x : decide(recs, all)) EXPECT_TRUE(x.retained());
}
