#pragma once

// Post-hoc temperature scaling and calibration metrics.

#include <cap/common.hpp>
#include <cap/refscorer.hpp>

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

namespace cap {

inline constexpr double kTemperatureMin = 0.05;
inline constexpr double kTemperatureMax = 100.0;

struct TemperatureModel {
  double temperature = 1.0;
  double nll_before = 0.0;  // mean NLL at T = 1
  double nll_after = 0.0;   // mean NLL at T = temperature
  std::size_t n_cal_fit = 0;
  bool clamped = false;

  nlohmann::ordered_json to_json() const {
    return {{"temperature", temperature},
            {"nll_before", nll_before},
            {"nll_after", nll_after},
            {"n_cal_fit", n_cal_fit},
            {"clamped", clamped}};
  }
};

// Mean NLL of σ(β·z) against the labels; convex in β.
inline double mean_nll_at_inverse_temperature(std::span<const ScoreRecord> records, double beta) {
  double total = 0.0;
  for (const auto& r : records) {
    const double z = beta * r.logit;
    total += r.label == 1 ? softplus(-z) : softplus(z);
  }
  return total / static_cast<double>(records.size());
}

// Golden-section search over β = 1/T in [1/T_max, 1/T_min] down to an
// interval width of 1e-8. The result is flagged as clamped when it sits on a
// bound.
inline TemperatureModel fit_temperature(std::span<const ScoreRecord> cal) {
  if (cal.empty()) throw ContractError("fit_temperature: empty calibration set");
  bool has_pos = false, has_neg = false;
  for (const auto& r : cal) (r.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw ContractError("fit_temperature: calibration set must contain both classes");

  auto f = [&](double beta) { return mean_nll_at_inverse_temperature(cal, beta); };
  const double lo_bound = 1.0 / kTemperatureMax, hi_bound = 1.0 / kTemperatureMin;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo_bound, b = hi_bound;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-8) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  double beta = 0.5 * (a + b);
  double best = f(beta);
  // The bounds themselves are candidates: a monotone objective ends there.
  for (double edge : {lo_bound, hi_bound}) {
    const double fe = f(edge);
    if (fe < best) {
      best = fe;
      beta = edge;
    }
  }

  TemperatureModel m;
  m.n_cal_fit = cal.size();
  m.nll_before = f(1.0);
  if (best > m.nll_before) {
    beta = 1.0;
    best = m.nll_before;
  }
  m.clamped = beta - lo_bound < 1e-6 || hi_bound - beta < 1e-6;
  if (m.clamped) beta = beta - lo_bound < 1e-6 ? lo_bound : hi_bound;
  m.temperature = 1.0 / beta;
  m.nll_after = f(beta);
  return m;
}

inline double apply_temperature(double logit, double temperature) { return sigmoid(logit / temperature); }

inline std::vector<double> apply_temperature(std::span<const ScoreRecord> records, const TemperatureModel& m) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(apply_temperature(r.logit, m.temperature));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ContractError("probability/label length mismatch");
}

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct ReliabilityTable {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
  std::size_t n = 0;

  void write_csv(std::ostream& out) const {
    out << "lower,upper,count,mean_confidence,mean_accuracy\n";
    for (const auto& b : bins)
      out << format_double(b.lower) << ',' << format_double(b.upper) << ',' << b.count << ','
          << format_double(b.mean_confidence) << ',' << format_double(b.mean_accuracy) << '\n';
  }
};

// Confidence is max(p, 1-p), the prediction is 1[p >= 0.5]. Bins are equal
// width over [0.5, 1], half-open except the last; empty bins contribute 0.
inline ReliabilityTable ece(std::span<const double> probs, std::span<const int> labels, std::size_t n_bins = 15) {
  check_lengths(probs.size(), labels.size());
  if (n_bins < 1) throw ContractError("ece: n_bins must be >= 1");
  ReliabilityTable t;
  t.n = probs.size();
  auto edge = [&](std::size_t m) { return 0.5 + 0.5 * static_cast<double>(m) / static_cast<double>(n_bins); };
  t.bins.resize(n_bins);
  for (std::size_t m = 0; m < n_bins; ++m) {
    t.bins[m].lower = edge(m);
    t.bins[m].upper = edge(m + 1);
  }
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double conf = std::max(p, 1.0 - p);
    const int pred = p >= 0.5 ? 1 : 0;
    auto m = static_cast<std::size_t>(
        std::clamp((conf - 0.5) * 2.0 * static_cast<double>(n_bins), 0.0, static_cast<double>(n_bins - 1)));
    while (m > 0 && conf < edge(m)) --m;
    while (m + 1 < n_bins && conf >= edge(m + 1)) ++m;
    ++t.bins[m].count;
    conf_sum[m] += conf;
    acc_sum[m] += pred == labels[i] ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < n_bins; ++m) {
    auto& b = t.bins[m];
    if (b.count == 0) continue;
    const double c = static_cast<double>(b.count);
    b.mean_confidence = conf_sum[m] / c;
    b.mean_accuracy = acc_sum[m] / c;
    t.ece += c / static_cast<double>(t.n) * std::abs(b.mean_accuracy - b.mean_confidence);
  }
  return t;
}

inline double brier(std::span<const double> probs, std::span<const int> labels) {
  check_lengths(probs.size(), labels.size());
  if (probs.empty()) throw ContractError("brier: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d = probs[i] - labels[i];
    total += d * d;
  }
  return total / static_cast<double>(probs.size());
}

inline constexpr double kNllClip = 1e-12;

inline double nll(std::span<const double> probs, std::span<const int> labels) {
  check_lengths(probs.size(), labels.size());
  if (probs.empty()) throw ContractError("nll: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kNllClip, 1.0 - kNllClip);
    total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

}  // namespace cap
