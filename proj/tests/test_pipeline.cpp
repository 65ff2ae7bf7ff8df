#include <cap/pipeline.hpp>
#include <cap/synth.hpp>

#include <gtest/gtest.h>

#include <sstream>

#include "corpus.hpp"

using namespace cap;

namespace {

struct Parts {
  Dataset train, cal, test;
};

Parts motif_parts(std::size_t n, std::uint64_t seed) {
  fixtures::MotifCorpusSpec spec;
  spec.n = n;
  spec.seed = seed;
  const auto d = fixtures::motif_corpus(spec);
  const auto m = split_random(d, {0.6, 0.2, 0.2}, seed);
  return {d.subset(m.train_ids), d.subset(m.cal_ids), d.subset(m.test_ids)};
}

}  // namespace

TEST(RunCap, TrueLabelCoverageTracksEpsilon) {
  const auto p = motif_parts(3000, 1);
  const auto r = run_cap(p.train, p.cal, p.test, 0.2, {});
  ASSERT_EQ(r.decisions.size(), p.test.size());
  std::size_t covered = 0;
  for (std::size_t i = 0; i < r.test_records.size(); ++i)
    covered += r.rule.retains(nonconformity_calibration(r.test_prob_calibrated[i], r.test_records[i].label));
  const double coverage = static_cast<double>(covered) / static_cast<double>(p.test.size());
  EXPECT_NEAR(coverage, 0.8, 0.06);
  // The test-time score never exceeds the true-label score.
  const auto sel = selective_error(r.decisions, label_map(r.test_records));
  EXPECT_GE(sel.coverage, coverage);
  EXPECT_FALSE(r.rule.retain_all());
  ASSERT_TRUE(r.model);
  EXPECT_EQ(r.scorer_fingerprint, r.model->fingerprint());
  EXPECT_EQ(r.rule.calibration_fingerprint, fingerprint_ids(p.cal.ids()));
}

TEST(RunCap, TinyCalibrationRetainsEverything) {
  const auto p = motif_parts(600, 2);
  // Four calibration points at ε = 0.05: ⌈0.95 · 5⌉ = 5 > 4.
  std::vector<std::string> ids;
  std::size_t pos = 0, neg = 0;
  for (const auto& e : p.cal) {
    if ((e.label == 1 && pos < 2) || (e.label == 0 && neg < 2)) {
      ids.push_back(e.id);
      (e.label == 1 ? pos : neg)++;
    }
  }
  const auto r = run_cap(p.train, p.cal.subset(ids), p.test, 0.05, {});
  EXPECT_TRUE(r.rule.retain_all());
  for (const auto& d : r.decisions) EXPECT_TRUE(d.retained());
  for (std::size_t i = 0; i < r.decisions.size(); ++i)
    EXPECT_EQ(r.decisions[i].predicted, r.test_prob_calibrated[i] >= 0.5 ? 1 : 0);
  const auto rep = evaluate_methods(r);
  EXPECT_DOUBLE_EQ(rep.rows[2].coverage, 1.0);
  EXPECT_EQ(rep.rows[2].error_rate, rep.rows[1].error_rate);
}

TEST(RunCap, OverlappingSplitsAreRejected) {
  const auto p = motif_parts(400, 3);
  std::vector<SequenceExample> test(p.test.examples());
  test.push_back(p.cal[0]);
  try {
    run_cap(p.train, p.cal, Dataset(test), 0.2, {});
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find(p.cal[0].id), std::string::npos);
  }
}

TEST(RunCap, ManifestMismatchIsRejected) {
  const auto p = motif_parts(400, 4);
  SplitManifest m;
  m.train_ids = p.train.ids();
  m.cal_ids = p.cal.ids();
  m.test_ids = p.test.ids();
  EXPECT_NO_THROW(run_cap(p.train, p.cal, p.test, 0.2, {}, &m));
  std::swap(m.cal_ids, m.test_ids);
  EXPECT_THROW(run_cap(p.train, p.cal, p.test, 0.2, {}, &m), ContractError);
}

TEST(RunCap, ExternalLogitsMatchBuiltin) {
  const auto p = motif_parts(800, 5);
  const auto model = train_linear(p.train);
  const auto path = std::string(CAP_TEST_TMP) + "/pipeline_logits.tsv";
  {
    std::ofstream out(path);
    auto all = score(model, p.cal);
    const auto t = score(model, p.test);
    all.insert(all.end(), t.begin(), t.end());
    write_logits(out, all);
  }
  ScorerConfig ext;
  ext.kind = ScorerKind::ExternalLogits;
  ext.logits_path = path;
  const auto a = run_cap(p.train, p.cal, p.test, 0.2, {});
  const auto b = run_cap(p.train, p.cal, p.test, 0.2, ext);
  EXPECT_EQ(a.temperature.temperature, b.temperature.temperature);
  ASSERT_EQ(a.decisions.size(), b.decisions.size());
  for (std::size_t i = 0; i < a.decisions.size(); ++i) EXPECT_EQ(a.decisions[i].decision, b.decisions[i].decision);
  EXPECT_FALSE(b.model);
  EXPECT_NE(b.scorer_fingerprint, a.scorer_fingerprint);
}

TEST(Report, ThreeMethodsAndInvariance) {
  const auto p = motif_parts(2000, 6);
  const auto r = run_cap(p.train, p.cal, p.test, 0.2, {});
  const auto rep = evaluate_methods(r);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].method, "Baseline");
  EXPECT_EQ(rep.rows[1].method, "+TempScale");
  EXPECT_EQ(rep.rows[2].method, "CAP");
  EXPECT_TRUE(rep.auroc_invariant);
  EXPECT_EQ(*rep.rows[0].auroc, *rep.rows[1].auroc);
  EXPECT_LT(rep.rows[2].coverage, 1.0);
  EXPECT_LE(*rep.rows[2].error_rate, *rep.rows[1].error_rate);
}

TEST(DecisionTsv, RoundTrip) {
  const auto p = motif_parts(600, 7);
  const auto r = run_cap(p.train, p.cal, p.test, 0.3, {});
  std::stringstream s;
  write_decisions(s, r.decisions, {"manifest_fingerprint=abc"});
  const auto text = s.str();
  EXPECT_EQ(text.rfind("# manifest_fingerprint=abc\n", 0), 0u);
  const auto back = parse_decisions(s);
  ASSERT_EQ(back.size(), r.decisions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].example_id, r.decisions[i].example_id);
    EXPECT_EQ(back[i].prob_calibrated, r.decisions[i].prob_calibrated);
    EXPECT_EQ(back[i].decision, r.decisions[i].decision);
    EXPECT_EQ(back[i].predicted, r.decisions[i].predicted);
  }
  std::istringstream bad("example_id\tprob_calibrated\tnonconformity\tdecision\tpredicted_label\na\t0.5\t0.5\tmaybe\t\n");
  EXPECT_THROW(parse_decisions(bad), RowError);
}

TEST(CapFromRecords, SyntheticCoverageNearTarget) {
  double total = 0.0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    SyntheticSpec spec;
    spec.n_cal = 2000;
    spec.n_test = 2000;
    spec.miscalibration_temperature = 2.0;
    spec.seed = 1000 + t;
    auto draw = generate(spec);
    const auto r = cap_from_records(draw.cal, draw.test, 0.2);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < r.test_records.size(); ++i)
      covered += r.rule.retains(nonconformity_calibration(r.test_prob_calibrated[i], r.test_records[i].label));
    total += static_cast<double>(covered) / 2000.0;
  }
  // Binomial standard error of the mean over 100 x 2000 test points, plus
  // calibration-draw variance, stays well under 0.005.
  EXPECT_NEAR(total / trials, 0.8, 0.01);
}
