#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cap::fixtures {

// Edit distance straight from the recursive definition, memoised on
// (i, j) suffix positions.
inline std::size_t levenshtein_recursive(const std::string& a, const std::string& b) {
  std::vector<std::vector<std::optional<std::size_t>>> memo(a.size() + 1,
                                                            std::vector<std::optional<std::size_t>>(b.size() + 1));
  std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    if (memo[i][j]) return *memo[i][j];
    std::size_t best;
    if (a[i] == b[j]) {
      best = d(i + 1, j + 1);
    } else {
      best = 1 + std::min({d(i + 1, j), d(i, j + 1), d(i + 1, j + 1)});
    }
    memo[i][j] = best;
    return best;
  };
  return d(0, 0);
}

// All (positive, negative) pairs; ties count one half.
inline double auroc_all_pairs(std::span<const double> s, std::span<const int> y) {
  unsigned long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j])
        twice += 2;
      else if (s[i] == s[j])
        twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
}

// Conformal threshold by enumeration: the smallest score value v such that
// at least (1-ε)(n+1) scores are <= v; none means retain everything.
inline std::optional<double> threshold_by_enumeration(std::span<const double> scores, double epsilon) {
  const double needed = (1.0 - epsilon) * static_cast<double>(scores.size() + 1) - 1e-9;
  std::optional<double> best;
  for (double v : scores) {
    std::size_t at_most = 0;
    for (double w : scores) at_most += w <= v ? 1 : 0;
    if (static_cast<double>(at_most) >= needed && (!best || v < *best)) best = v;
  }
  return best;
}

// Mean NLL of σ(β·z) minimised over a uniform grid of β.
template <typename Records>
double inverse_temperature_by_grid(const Records& records, double lo, double hi, std::size_t steps) {
  double best_b = lo, best = 1e300;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double b = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps);
    double total = 0.0;
    for (const auto& r : records) {
      const double z = b * r.logit;
      total += r.label == 1 ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    if (total < best) {
      best = total;
      best_b = b;
    }
  }
  return best_b;
}

// Mean NLL of σ(z/T) minimised over a uniform grid of T.
template <typename Records>
double temperature_by_grid(const Records& records, double lo, double hi, std::size_t steps) {
  double best_t = lo, best = 1e300;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps);
    double total = 0.0;
    for (const auto& r : records) {
      const double z = r.logit / t;
      // -log σ(z) and -log(1-σ(z)), written out directly.
      total += r.label == 1 ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    if (total < best) {
      best = total;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace cap::fixtures
