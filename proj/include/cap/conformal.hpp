#pragma once

// Split-conformal abstention.
//
// Calibration examples are scored by one minus the calibrated probability of
// their true label. The threshold is the ⌈(1-ε)(n+1)⌉-th smallest of those
// scores; a test point is predicted when one minus the probability of its
// predicted label does not exceed it, and abstained on otherwise.
//
// The finite-sample guarantee P(s_test <= τ) >= 1 - ε - 1/(n+1) needs
// calibration and test points to be exchangeable. Under epitope-held-out and
// distance-aware splits they are not, so there the coverage is empirical
// only.

#include <cap/common.hpp>

#include <json.hpp>

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cap {

inline double nonconformity_calibration(double prob, int label) {
  return label == 1 ? 1.0 - prob : prob;
}

inline double nonconformity_test(double prob) { return 1.0 - std::max(prob, 1.0 - prob); }

inline int predicted_label(double prob) { return prob >= 0.5 ? 1 : 0; }

struct ConformalRule {
  double epsilon = 0.1;
  std::size_t n_cal = 0;
  long long quantile_index = 0;     // ⌈(1-ε)(n_cal+1)⌉, 1-based
  std::optional<double> threshold;  // empty: RETAIN_ALL
  std::string calibration_fingerprint;

  bool retain_all() const { return !threshold.has_value(); }
  // Set when the quantile index exceeds n_cal: the guarantee is vacuous and
  // every point is retained.
  bool warning() const { return retain_all(); }

  bool retains(double nonconformity) const { return retain_all() || nonconformity <= *threshold; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["epsilon"] = epsilon;
    j["n_cal"] = n_cal;
    j["quantile_index"] = quantile_index;
    if (threshold)
      j["threshold"] = *threshold;
    else
      j["threshold"] = "RETAIN_ALL";
    j["calibration_fingerprint"] = calibration_fingerprint;
    return j;
  }
};

inline long long conformal_quantile_index(double epsilon, std::size_t n_cal) {
  return ceil_tolerant((1.0 - epsilon) * static_cast<double>(n_cal + 1));
}

inline ConformalRule fit_threshold(std::span<const double> cal_scores, double epsilon) {
  if (cal_scores.empty()) throw ContractError("fit_threshold: no calibration scores");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ContractError("fit_threshold: epsilon must be in (0, 1)");
  ConformalRule rule;
  rule.epsilon = epsilon;
  rule.n_cal = cal_scores.size();
  rule.quantile_index = conformal_quantile_index(epsilon, rule.n_cal);
  if (rule.quantile_index <= static_cast<long long>(rule.n_cal)) {
    std::vector<double> sorted(cal_scores.begin(), cal_scores.end());
    const auto k = static_cast<std::size_t>(std::max(1LL, rule.quantile_index)) - 1;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    rule.threshold = sorted[k];
  }
  return rule;
}

enum class DecisionKind { Predict, Abstain };

struct SelectiveDecision {
  std::string example_id;
  double prob_calibrated = 0.5;
  double nonconformity = 0.5;
  DecisionKind decision = DecisionKind::Abstain;
  int predicted = -1;  // 0/1 when decision == Predict

  bool retained() const { return decision == DecisionKind::Predict; }
};

struct CalibratedPrediction {
  std::string example_id;
  double prob = 0.5;
};

inline SelectiveDecision decide_one(const CalibratedPrediction& r, const ConformalRule& rule) {
  SelectiveDecision d;
  d.example_id = r.example_id;
  d.prob_calibrated = r.prob;
  d.nonconformity = nonconformity_test(r.prob);
  if (rule.retains(d.nonconformity)) {
    d.decision = DecisionKind::Predict;
    d.predicted = predicted_label(r.prob);
  }
  return d;
}

inline std::vector<SelectiveDecision> decide(std::span<const CalibratedPrediction> records,
                                             const ConformalRule& rule) {
  std::vector<SelectiveDecision> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(decide_one(r, rule));
  return out;
}

}  // namespace cap
