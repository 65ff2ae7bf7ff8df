#pragma once

// Synthetic score records with known ground-truth probabilities, for
// checking the conformal coverage guarantee and the calibration-set-size
// sensitivity under exchangeability.
//
// True probabilities come from a two-component mixture: a "background"
// Beta(1, background_b) concentrated near 0 and a "binder" Beta(binder_a,
// binder_b). The binder weight is solved so the mixture mean equals
// base_positive_rate. Labels are Bernoulli(p) and the emitted logit is
// miscalibration_temperature · logit(p), so a perfectly fitted temperature
// equals miscalibration_temperature.

#include <cap/calibrate.hpp>
#include <cap/common.hpp>
#include <cap/conformal.hpp>
#include <cap/refscorer.hpp>

#include <cmath>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace cap {

struct SyntheticSpec {
  std::size_t n_cal = 2000;
  std::size_t n_test = 5000;
  double miscalibration_temperature = 1.0;
  double base_positive_rate = 0.045;
  std::uint64_t seed = 0;
  int background_b = 29;
  int binder_a = 3;
  int binder_b = 2;

  double background_mean() const { return 1.0 / (1.0 + background_b); }
  double binder_mean() const { return static_cast<double>(binder_a) / (binder_a + binder_b); }
  double binder_weight() const {
    return (base_positive_rate - background_mean()) / (binder_mean() - background_mean());
  }

  void validate() const {
    if (!(miscalibration_temperature > 0.0)) throw ContractError("miscalibration_temperature must be > 0");
    if (n_cal < 1 || n_test < 1) throw ContractError("n_cal and n_test must be >= 1");
    if (background_b < 1 || binder_a < 1 || binder_b < 1) throw ContractError("beta shapes must be >= 1");
    const double w = binder_weight();
    if (!(w >= 0.0 && w <= 1.0))
      throw ContractError("base_positive_rate must lie between the component means");
  }
};

struct SyntheticDraw {
  std::vector<ScoreRecord> cal;
  std::vector<ScoreRecord> test;
};

inline double synthetic_true_probability(const SyntheticSpec& spec, Rng& rng) {
  double p = uniform01(rng) < spec.binder_weight() ? beta_int(rng, spec.binder_a, spec.binder_b)
                                                   : beta_int(rng, 1, spec.background_b);
  // Keep logit(p) finite.
  return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

// Cal and test are consecutive i.i.d. draws from one stream, so they are
// exchangeable. Ids are "cal<i>" / "test<i>".
inline SyntheticDraw generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  auto draw = [&](std::size_t n, const char* prefix) {
    std::vector<ScoreRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = synthetic_true_probability(spec, rng);
      const int y = uniform01(rng) < p ? 1 : 0;
      const double z = spec.miscalibration_temperature * std::log(p / (1.0 - p));
      out.push_back(make_record(std::string(prefix) + std::to_string(i), z, y));
    }
    return out;
  };
  SyntheticDraw d;
  d.cal = draw(spec.n_cal, "cal");
  d.test = draw(spec.n_test, "test");
  return d;
}

struct CoverageTrial {
  std::uint64_t seed = 0;
  double temperature = 1.0;
  bool temperature_clamped = false;
  bool retain_all = false;
  // Fraction of test points whose true-label nonconformity is <= threshold;
  // the quantity the conformal guarantee bounds.
  double coverage = 0.0;
  // Fraction of test points the decision rule predicts on (test-time
  // nonconformity of the predicted label).
  double retention = 0.0;
  double ece_before = 0.0;  // test-set ECE of raw probabilities
  double ece_after = 0.0;   // test-set ECE after temperature scaling
};

struct CoverageSummary {
  double mean_coverage = 0.0;
  double sd = 0.0;  // sample sd of per-trial coverage; 0 for one trial
  double mean_retention = 0.0;
  double mean_ece_before = 0.0;
  double mean_ece_after = 0.0;
  double mean_temperature = 0.0;
  std::size_t retain_all_trials = 0;
  std::size_t clamped_trials = 0;
  std::vector<CoverageTrial> trials;

  double standard_error() const {
    return trials.size() > 1 ? sd / std::sqrt(static_cast<double>(trials.size())) : 0.0;
  }
};

// One generate → fit temperature → fit threshold → measure cycle.
inline CoverageTrial run_coverage_trial(const SyntheticSpec& spec, double epsilon) {
  const auto draw = generate(spec);
  CoverageTrial t;
  t.seed = spec.seed;

  double temperature = 1.0;
  bool has_pos = false, has_neg = false;
  for (const auto& r : draw.cal) (r.label == 1 ? has_pos : has_neg) = true;
  // A single-class calibration draw (possible at tiny n_cal) has no
  // temperature fit; it is left unscaled.
  if (has_pos && has_neg) {
    const auto tm = fit_temperature(draw.cal);
    temperature = tm.temperature;
    t.temperature_clamped = tm.clamped;
  }
  t.temperature = temperature;

  std::vector<double> cal_scores;
  cal_scores.reserve(draw.cal.size());
  for (const auto& r : draw.cal)
    cal_scores.push_back(nonconformity_calibration(apply_temperature(r.logit, temperature), r.label));
  const auto rule = fit_threshold(cal_scores, epsilon);
  t.retain_all = rule.retain_all();

  std::vector<double> raw, scaled;
  std::vector<int> labels;
  std::size_t covered = 0, retained = 0;
  for (const auto& r : draw.test) {
    const double p = apply_temperature(r.logit, temperature);
    raw.push_back(r.prob_raw);
    scaled.push_back(p);
    labels.push_back(r.label);
    covered += rule.retains(nonconformity_calibration(p, r.label)) ? 1 : 0;
    retained += rule.retains(nonconformity_test(p)) ? 1 : 0;
  }
  const double n = static_cast<double>(draw.test.size());
  t.coverage = static_cast<double>(covered) / n;
  t.retention = static_cast<double>(retained) / n;
  t.ece_before = ece(raw, labels).ece;
  t.ece_after = ece(scaled, labels).ece;
  return t;
}

// Trial t uses seed spec.seed + t. Trials run in parallel; results are
// independent of the thread count.
inline CoverageSummary coverage_experiment(const SyntheticSpec& spec, double epsilon, std::size_t n_trials) {
  if (n_trials < 1) throw ContractError("n_trials must be >= 1");
  spec.validate();
  CoverageSummary s;
  s.trials.resize(n_trials);
  parallel_for(n_trials, [&](std::size_t t) {
    SyntheticSpec trial = spec;
    trial.seed = spec.seed + t;
    s.trials[t] = run_coverage_trial(trial, epsilon);
  });
  const double k = static_cast<double>(n_trials);
  for (const auto& t : s.trials) {
    s.mean_coverage += t.coverage / k;
    s.mean_retention += t.retention / k;
    s.mean_ece_before += t.ece_before / k;
    s.mean_ece_after += t.ece_after / k;
    s.mean_temperature += t.temperature / k;
    s.retain_all_trials += t.retain_all ? 1 : 0;
    s.clamped_trials += t.temperature_clamped ? 1 : 0;
  }
  if (n_trials > 1) {
    double ss = 0.0;
    for (const auto& t : s.trials) ss += (t.coverage - s.mean_coverage) * (t.coverage - s.mean_coverage);
    s.sd = std::sqrt(ss / (k - 1.0));
  }
  return s;
}

struct SizeSweepRow {
  std::size_t n_cal = 0;
  double mean_ece_after = 0.0;
  double mean_coverage = 0.0;
  double mean_ece_before = 0.0;
  double mean_retention = 0.0;
  double coverage_sd = 0.0;
  std::size_t retain_all_trials = 0;
};

inline std::vector<SizeSweepRow> calibration_size_sweep(const SyntheticSpec& base, const std::vector<std::size_t>& sizes,
                                                        double epsilon, std::size_t n_trials) {
  if (sizes.empty()) throw ContractError("calibration_size_sweep: no sizes");
  std::vector<SizeSweepRow> rows;
  for (auto n : sizes) {
    SyntheticSpec spec = base;
    spec.n_cal = n;
    const auto s = coverage_experiment(spec, epsilon, n_trials);
    rows.push_back({n, s.mean_ece_after, s.mean_coverage, s.mean_ece_before, s.mean_retention, s.sd,
                    s.retain_all_trials});
  }
  return rows;
}

inline void write_size_sweep_csv(std::ostream& out, const std::vector<SizeSweepRow>& rows) {
  out << "n_cal,mean_ece_after,mean_coverage,mean_ece_before,mean_retention,coverage_sd,retain_all_trials\n";
  for (const auto& r : rows)
    out << r.n_cal << ',' << format_double(r.mean_ece_after) << ',' << format_double(r.mean_coverage) << ','
        << format_double(r.mean_ece_before) << ',' << format_double(r.mean_retention) << ','
        << format_double(r.coverage_sd) << ',' << r.retain_all_trials << '\n';
}

}  // namespace cap
