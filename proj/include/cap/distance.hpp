#pragma once

// Unit-cost edit distance and the derived sequence identity used by
// deduplication and the distance-aware split.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string_view>
#include <vector>

namespace cap {

// Two-row dynamic program, O(|a|·|b|) time, O(min(|a|,|b|)) space.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return a.size();
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

// Edit distance if it is <= max_distance, else nullopt. Only the diagonal
// band of width 2·max_distance+1 is evaluated and the scan stops as soon as
// the whole band exceeds the bound.
inline std::optional<std::size_t> levenshtein_within(std::string_view a, std::string_view b,
                                                     std::size_t max_distance) {
  if (a.size() < b.size()) std::swap(a, b);
  if (a.size() - b.size() > max_distance) return std::nullopt;
  if (b.empty()) return a.size();
  const std::size_t inf = max_distance + 1;
  const std::size_t n = b.size();
  std::vector<std::size_t> prev(n + 1, inf), cur(n + 1, inf);
  for (std::size_t j = 0; j <= std::min(n, max_distance); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    const std::size_t lo = i > max_distance ? i - max_distance : 1;
    const std::size_t hi = std::min(n, i + max_distance);
    std::fill(cur.begin(), cur.end(), inf);
    if (i <= max_distance) cur[0] = i;
    std::size_t row_min = cur[0];
    for (std::size_t j = lo; j <= hi; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      const std::size_t v = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
      cur[j] = std::min(v, inf);
      row_min = std::min(row_min, cur[j]);
    }
    if (row_min > max_distance) return std::nullopt;
    std::swap(prev, cur);
  }
  if (prev[n] > max_distance) return std::nullopt;
  return prev[n];
}

// identity(a, b) = 1 - levenshtein(a, b) / max(|a|, |b|); two empty strings
// are identical.
inline double sequence_identity(std::string_view a, std::string_view b) {
  const std::size_t len = std::max(a.size(), b.size());
  if (len == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(len);
}

// True iff sequence_identity(a, b) >= threshold. Uses the banded kernel with
// the largest distance that could still reach the threshold; the final
// comparison is made on the same expression as sequence_identity.
inline bool identity_at_least(std::string_view a, std::string_view b, double threshold) {
  const std::size_t len = std::max(a.size(), b.size());
  if (len == 0) return 1.0 >= threshold;
  const double slack = (1.0 - threshold) * static_cast<double>(len);
  const auto bound = static_cast<std::size_t>(std::max(0.0, std::floor(slack))) + 1;
  const auto d = levenshtein_within(a, b, std::min(bound, len));
  if (!d) return false;
  return 1.0 - static_cast<double>(*d) / static_cast<double>(len) >= threshold;
}

}  // namespace cap
