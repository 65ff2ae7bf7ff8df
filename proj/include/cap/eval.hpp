#pragma once

// Ranking metrics, selective error and coverage-risk sweeps.

#include <cap/calibrate.hpp>
#include <cap/common.hpp>
#include <cap/conformal.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cap {

// Mann-Whitney AUROC: P(score+ > score-) + 0.5·P(tie). Counted in integer
// half-units so the result is exact.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  unsigned long long n_pos = 0, n_neg = 0, twice_u = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    unsigned long long pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_u += 2 * pos * n_neg + pos * neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw ContractError("auroc needs both classes present");
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Average precision: mean over positives of the precision at the positive's
// rank, ranks by descending score with ties kept in input order.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 1) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  if (tp == 0) throw ContractError("auprc needs at least one positive");
  return sum / static_cast<double>(tp);
}

struct SelectiveError {
  double coverage = 0.0;
  std::optional<double> risk;  // absent when nothing is retained
  std::size_t retained = 0;
  std::size_t total = 0;
};

inline SelectiveError selective_error(std::span<const SelectiveDecision> decisions,
                                      const std::unordered_map<std::string, int>& labels) {
  SelectiveError out;
  out.total = decisions.size();
  std::size_t wrong = 0;
  for (const auto& d : decisions) {
    auto it = labels.find(d.example_id);
    if (it == labels.end()) throw ContractError("no label for id '" + d.example_id + "'");
    if (!d.retained()) continue;
    ++out.retained;
    if (d.predicted != it->second) ++wrong;
  }
  if (out.total > 0) out.coverage = static_cast<double>(out.retained) / static_cast<double>(out.total);
  if (out.retained > 0) out.risk = static_cast<double>(wrong) / static_cast<double>(out.retained);
  return out;
}

struct CoverageRiskPoint {
  double target_coverage = 1.0;
  double coverage = 0.0;
  std::optional<double> risk;
  std::optional<double> ece;
  std::optional<double> auprc;
  double abstained = 0.0;
  std::size_t retained = 0;
};

struct CoverageRiskCurve {
  std::vector<CoverageRiskPoint> points;
  std::string source;

  // Columns in the order coverage, error_rate, ece, auprc, abstained; absent
  // values are empty fields.
  void write_csv(std::ostream& out) const {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    out << "coverage,error_rate,ece,auprc,abstained\n";
    for (const auto& p : points)
      out << format_double(p.coverage) << ',' << opt(p.risk) << ',' << opt(p.ece) << ',' << opt(p.auprc) << ','
          << format_double(p.abstained) << '\n';
  }
};

inline const std::vector<double>& default_coverage_grid() {
  static const std::vector<double> grid{1.0, 0.9, 0.8, 0.7, 0.6};
  return grid;
}

// For each target coverage c, keeps the round(c·n) records with the smallest
// test nonconformity (ties in input order) and evaluates risk, 15-bin ECE and
// AUPRC of the calibrated probabilities on that subset. Points come out in
// descending coverage.
inline CoverageRiskCurve coverage_risk_sweep(std::span<const CalibratedPrediction> records,
                                             const std::unordered_map<std::string, int>& labels,
                                             std::vector<double> grid = default_coverage_grid(),
                                             std::string source = {}) {
  for (double c : grid)
    if (!(c > 0.0 && c <= 1.0)) throw ContractError("coverage grid values must be in (0, 1]");
  std::stable_sort(grid.begin(), grid.end(), std::greater<>());

  const std::size_t n = records.size();
  std::vector<int> y(n);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = labels.find(records[i].example_id);
    if (it == labels.end()) throw ContractError("no label for id '" + records[i].example_id + "'");
    y[i] = it->second;
    s[i] = nonconformity_test(records[i].prob);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s[a] < s[b]; });

  CoverageRiskCurve curve;
  curve.source = std::move(source);
  for (double c : grid) {
    CoverageRiskPoint pt;
    pt.target_coverage = c;
    const auto m = static_cast<std::size_t>(std::llround(c * static_cast<double>(n)));
    pt.retained = std::min(m, n);
    std::vector<double> probs;
    std::vector<int> labs;
    std::size_t wrong = 0, pos = 0;
    for (std::size_t r = 0; r < pt.retained; ++r) {
      const auto i = order[r];
      probs.push_back(records[i].prob);
      labs.push_back(y[i]);
      wrong += predicted_label(records[i].prob) != y[i] ? 1 : 0;
      pos += y[i] == 1 ? 1 : 0;
    }
    if (n > 0) {
      pt.coverage = static_cast<double>(pt.retained) / static_cast<double>(n);
      pt.abstained = static_cast<double>(n - pt.retained) / static_cast<double>(n);
    }
    if (pt.retained > 0) {
      pt.risk = static_cast<double>(wrong) / static_cast<double>(pt.retained);
      pt.ece = ece(probs, labs).ece;
      if (pos > 0 && pos < pt.retained) pt.auprc = auprc(probs, labs);
    }
    curve.points.push_back(pt);
  }
  return curve;
}

}  // namespace cap
