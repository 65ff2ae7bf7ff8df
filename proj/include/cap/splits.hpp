#pragma once

// Train/calibration/test partitions: stratified random, epitope-held-out and
// distance-aware (single-linkage clusters over CDR3β identity).

#include <cap/common.hpp>
#include <cap/distance.hpp>
#include <cap/seqdata.hpp>

#include <json.hpp>

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cap {

enum class SplitProtocol { Random, EpitopeHeldOut, DistanceAware };

inline std::string to_string(SplitProtocol p) {
  switch (p) {
    case SplitProtocol::Random: return "random";
    case SplitProtocol::EpitopeHeldOut: return "epitope_held_out";
    case SplitProtocol::DistanceAware: return "distance_aware";
  }
  return "unknown";
}

inline SplitProtocol parse_protocol(const std::string& s) {
  if (s == "random") return SplitProtocol::Random;
  if (s == "epitope_held_out" || s == "eho") return SplitProtocol::EpitopeHeldOut;
  if (s == "distance_aware" || s == "da") return SplitProtocol::DistanceAware;
  throw ContractError("unknown split protocol '" + s + "'");
}

struct SplitParameters {
  // Random
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  // EpitopeHeldOut
  std::size_t k_test_epitopes = 15;
  bool cal_epitope_disjoint = false;
  // EpitopeHeldOut and DistanceAware
  double cal_fraction = 0.107;
  // DistanceAware
  double identity_ceiling = 0.70;
  double test_fraction = 0.20;
};

struct SplitManifest {
  SplitProtocol protocol = SplitProtocol::Random;
  std::uint64_t seed = 0;
  SplitParameters parameters;
  std::vector<std::string> train_ids;
  std::vector<std::string> cal_ids;
  std::vector<std::string> test_ids;

  // Keys are emitted in a fixed order and only the active protocol's
  // parameters are written.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json params;
    switch (protocol) {
      case SplitProtocol::Random:
        params["fractions"] = parameters.fractions;
        break;
      case SplitProtocol::EpitopeHeldOut:
        params["k_test_epitopes"] = parameters.k_test_epitopes;
        params["cal_fraction"] = parameters.cal_fraction;
        params["cal_epitope_disjoint"] = parameters.cal_epitope_disjoint;
        break;
      case SplitProtocol::DistanceAware:
        params["identity_ceiling"] = parameters.identity_ceiling;
        params["cal_fraction"] = parameters.cal_fraction;
        params["test_fraction"] = parameters.test_fraction;
        break;
    }
    nlohmann::ordered_json j;
    j["protocol"] = to_string(protocol);
    j["seed"] = seed;
    j["parameters"] = params;
    j["train_ids"] = train_ids;
    j["cal_ids"] = cal_ids;
    j["test_ids"] = test_ids;
    return j;
  }

  std::string dump() const { return to_json().dump(2) + "\n"; }
  std::string fingerprint() const { return cap::fingerprint(dump()); }

  static SplitManifest from_json(const nlohmann::json& j) {
    SplitManifest m;
    m.protocol = parse_protocol(j.at("protocol").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& p = j.at("parameters");
    if (p.contains("fractions")) m.parameters.fractions = p["fractions"].get<std::array<double, 3>>();
    if (p.contains("k_test_epitopes")) m.parameters.k_test_epitopes = p["k_test_epitopes"].get<std::size_t>();
    if (p.contains("cal_epitope_disjoint")) m.parameters.cal_epitope_disjoint = p["cal_epitope_disjoint"].get<bool>();
    if (p.contains("cal_fraction")) m.parameters.cal_fraction = p["cal_fraction"].get<double>();
    if (p.contains("identity_ceiling")) m.parameters.identity_ceiling = p["identity_ceiling"].get<double>();
    if (p.contains("test_fraction")) m.parameters.test_fraction = p["test_fraction"].get<double>();
    m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    m.cal_ids = j.at("cal_ids").get<std::vector<std::string>>();
    m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    m.check_disjoint();
    return m;
  }

  void check_disjoint() const {
    std::unordered_set<std::string> seen;
    for (const auto* part : {&train_ids, &cal_ids, &test_ids})
      for (const auto& id : *part)
        if (!seen.insert(id).second)
          throw ContractError("id '" + id + "' assigned to more than one split part");
  }
};

namespace detail {

// Integer sizes summing to `total` closest to total·weights[j] / weight_sum:
// floors first, then one extra unit per part by descending fractional
// remainder (ties to the lower part index). `caps` bounds each part.
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& quotas,
                                                  const std::vector<std::size_t>& caps) {
  const std::size_t parts = quotas.size();
  std::vector<std::size_t> out(parts);
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < parts; ++j) {
    out[j] = std::min(caps[j], static_cast<std::size_t>(std::max(0.0, std::floor(quotas[j]))));
    assigned += out[j];
  }
  std::vector<std::size_t> order(parts);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a] - std::floor(quotas[a]) > quotas[b] - std::floor(quotas[b]);
  });
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t j : order) {
      if (assigned == total) break;
      if (out[j] < caps[j]) {
        ++out[j];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) throw ContractError("split allocation exceeds capacity");
  }
  return out;
}

// Label-stratified partition of `indices` into parts with the given
// fractions. Part sizes match the global largest-remainder sizes exactly and
// each non-final stratum receives its proportional share of every part.
inline std::vector<std::vector<std::size_t>> stratified_partition(
    const Dataset& data, const std::vector<std::size_t>& indices, const std::vector<double>& fractions,
    Rng& rng) {
  const std::size_t parts = fractions.size();
  const std::size_t n = indices.size();
  std::vector<std::size_t> pos, neg;
  for (auto i : indices) (data[i].label == 1 ? pos : neg).push_back(i);

  std::size_t nonzero = 0;
  for (double f : fractions) nonzero += f > 0.0 ? 1 : 0;
  for (const auto* stratum : {&pos, &neg}) {
    if (!stratum->empty() && stratum->size() < nonzero)
      throw ContractError(std::string(stratum == &pos ? "positive" : "negative") + " stratum has " +
                          std::to_string(stratum->size()) + " examples, too few to populate " +
                          std::to_string(nonzero) + " split parts");
  }

  std::vector<double> global_q(parts);
  for (std::size_t j = 0; j < parts; ++j) global_q[j] = static_cast<double>(n) * fractions[j];
  const auto sizes = largest_remainder(n, global_q, std::vector<std::size_t>(parts, n));

  shuffle(pos, rng);
  shuffle(neg, rng);

  std::vector<double> pos_q(parts);
  for (std::size_t j = 0; j < parts; ++j)
    pos_q[j] = n == 0 ? 0.0
                      : static_cast<double>(pos.size()) * static_cast<double>(sizes[j]) /
                            static_cast<double>(n);
  const auto pos_sizes = largest_remainder(pos.size(), pos_q, sizes);

  std::vector<std::vector<std::size_t>> out(parts);
  std::size_t pi = 0, ni = 0;
  for (std::size_t j = 0; j < parts; ++j) {
    for (std::size_t c = 0; c < pos_sizes[j]; ++c) out[j].push_back(pos[pi++]);
    for (std::size_t c = 0; c < sizes[j] - pos_sizes[j]; ++c) out[j].push_back(neg[ni++]);
    std::sort(out[j].begin(), out[j].end());
  }
  return out;
}

inline std::vector<std::string> ids_of(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data[i].id);
  return out;
}

// Greedy group selection: walk the groups in order, take a group while the
// running total stays <= target; the first group that would overshoot is
// taken only if it lands closer to the target, and then selection stops.
inline std::vector<bool> select_groups_to_budget(const std::vector<std::size_t>& group_sizes,
                                                 const std::vector<std::size_t>& order, double target) {
  std::vector<bool> chosen(group_sizes.size(), false);
  double total = 0.0;
  for (auto g : order) {
    if (total >= target) break;
    const double size = static_cast<double>(group_sizes[g]);
    if (total + size <= target) {
      chosen[g] = true;
      total += size;
    } else {
      if (std::abs(total + size - target) < std::abs(total - target)) chosen[g] = true;
      break;
    }
  }
  return chosen;
}

inline void check_fraction_open(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0)) throw ContractError(std::string(name) + " must be in (0, 1)");
}

}  // namespace detail

// Label-stratified 3-way split; the middle part is the calibration set.
inline SplitManifest split_random(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ContractError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(seed);
  const auto parts = detail::stratified_partition(data, all, {fractions.begin(), fractions.end()}, rng);

  SplitManifest m;
  m.protocol = SplitProtocol::Random;
  m.seed = seed;
  m.parameters.fractions = fractions;
  m.train_ids = detail::ids_of(data, parts[0]);
  m.cal_ids = detail::ids_of(data, parts[1]);
  m.test_ids = detail::ids_of(data, parts[2]);
  return m;
}

// All pairs of k seeded-random epitopes go to test; the rest is divided into
// train and calibration, at pair level (label-stratified) by default or by
// whole epitopes when `cal_epitope_disjoint` is set.
inline SplitManifest split_epitope_held_out(const Dataset& data, std::size_t k_test_epitopes,
                                            double cal_fraction, std::uint64_t seed,
                                            bool cal_epitope_disjoint = false) {
  detail::check_fraction_open(cal_fraction, "cal_fraction");
  std::vector<std::string> epitopes;
  std::unordered_map<std::string, std::size_t> epitope_index;
  std::vector<std::size_t> epitope_size;
  for (const auto& e : data) {
    auto [it, inserted] = epitope_index.emplace(e.epitope_id, epitopes.size());
    if (inserted) {
      epitopes.push_back(e.epitope_id);
      epitope_size.push_back(0);
    }
    ++epitope_size[it->second];
  }
  if (k_test_epitopes >= epitopes.size())
    throw ContractError("k_test_epitopes (" + std::to_string(k_test_epitopes) +
                        ") must be smaller than the number of distinct epitopes (" +
                        std::to_string(epitopes.size()) + ")");

  Rng rng(seed);
  std::vector<std::size_t> order(epitopes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k_test_epitopes; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> is_test(epitopes.size(), false);
  for (std::size_t i = 0; i < k_test_epitopes; ++i) is_test[order[i]] = true;

  std::vector<std::size_t> test, rest;
  for (std::size_t i = 0; i < data.size(); ++i)
    (is_test[epitope_index.at(data[i].epitope_id)] ? test : rest).push_back(i);

  std::vector<std::size_t> train, cal;
  if (cal_epitope_disjoint) {
    std::vector<std::size_t> remaining(order.begin() + static_cast<std::ptrdiff_t>(k_test_epitopes),
                                       order.end());
    std::sort(remaining.begin(), remaining.end());
    shuffle(remaining, rng);
    const auto chosen = detail::select_groups_to_budget(
        epitope_size, remaining, cal_fraction * static_cast<double>(rest.size()));
    for (auto i : rest) (chosen[epitope_index.at(data[i].epitope_id)] ? cal : train).push_back(i);
  } else {
    const auto parts = detail::stratified_partition(data, rest, {1.0 - cal_fraction, cal_fraction}, rng);
    train = parts[0];
    cal = parts[1];
  }

  SplitManifest m;
  m.protocol = SplitProtocol::EpitopeHeldOut;
  m.seed = seed;
  m.parameters.k_test_epitopes = k_test_epitopes;
  m.parameters.cal_fraction = cal_fraction;
  m.parameters.cal_epitope_disjoint = cal_epitope_disjoint;
  m.train_ids = detail::ids_of(data, train);
  m.cal_ids = detail::ids_of(data, cal);
  m.test_ids = detail::ids_of(data, test);
  return m;
}

// Single-linkage clustering of the distinct strings at identity >= ceiling.
// Returns the cluster index of each string; clusters are numbered by first
// appearance.
inline std::vector<std::size_t> identity_clusters(const std::vector<std::string>& strings,
                                                  double identity_ceiling) {
  const std::size_t n = strings.size();
  std::vector<std::vector<std::size_t>> links(n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j)
      if (identity_at_least(strings[i], strings[j], identity_ceiling)) links[i].push_back(j);
  });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : links[i]) {
      auto a = find(i), b = find(j);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  std::vector<std::size_t> label(n);
  std::unordered_map<std::size_t, std::size_t> renumber;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, _] = renumber.emplace(find(i), renumber.size());
    label[i] = it->second;
  }
  return label;
}

// Whole CDR3β clusters are moved to test until it holds ~test_fraction of the
// examples, so every test CDR3β has identity < identity_ceiling with every
// train and calibration CDR3β.
inline SplitManifest split_distance_aware(const Dataset& data, double identity_ceiling, double cal_fraction,
                                          std::uint64_t seed, double test_fraction = 0.20) {
  detail::check_fraction_open(identity_ceiling, "identity_ceiling");
  detail::check_fraction_open(cal_fraction, "cal_fraction");
  detail::check_fraction_open(test_fraction, "test_fraction");

  std::vector<std::string> strings;
  std::unordered_map<std::string, std::size_t> string_index;
  std::vector<std::size_t> example_string(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [it, inserted] = string_index.emplace(data[i].cdr3b, strings.size());
    if (inserted) strings.push_back(data[i].cdr3b);
    example_string[i] = it->second;
  }
  const auto cluster_of_string = identity_clusters(strings, identity_ceiling);
  std::size_t n_clusters = 0;
  for (auto c : cluster_of_string) n_clusters = std::max(n_clusters, c + 1);
  std::vector<std::size_t> cluster_size(n_clusters, 0);
  for (std::size_t i = 0; i < data.size(); ++i) ++cluster_size[cluster_of_string[example_string[i]]];

  const double n = static_cast<double>(data.size());
  for (std::size_t c = 0; c < n_clusters; ++c)
    if (static_cast<double>(cluster_size[c]) > 0.8 * n)
      throw ContractError("a single CDR3b identity cluster holds " + std::to_string(cluster_size[c]) +
                          " of " + std::to_string(data.size()) +
                          " examples (> 80%); no distance-aware test set exists at this ceiling");

  Rng rng(seed);
  std::vector<std::size_t> order(n_clusters);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  const auto in_test = detail::select_groups_to_budget(cluster_size, order, test_fraction * n);

  std::vector<std::size_t> test, rest;
  for (std::size_t i = 0; i < data.size(); ++i)
    (in_test[cluster_of_string[example_string[i]]] ? test : rest).push_back(i);
  const auto parts = detail::stratified_partition(data, rest, {1.0 - cal_fraction, cal_fraction}, rng);

  SplitManifest m;
  m.protocol = SplitProtocol::DistanceAware;
  m.seed = seed;
  m.parameters.identity_ceiling = identity_ceiling;
  m.parameters.cal_fraction = cal_fraction;
  m.parameters.test_fraction = test_fraction;
  m.train_ids = detail::ids_of(data, parts[0]);
  m.cal_ids = detail::ids_of(data, parts[1]);
  m.test_ids = detail::ids_of(data, test);
  return m;
}

inline SplitManifest make_split(const Dataset& data, SplitProtocol protocol, const SplitParameters& p,
                                std::uint64_t seed) {
  switch (protocol) {
    case SplitProtocol::Random: return split_random(data, p.fractions, seed);
    case SplitProtocol::EpitopeHeldOut:
      return split_epitope_held_out(data, p.k_test_epitopes, p.cal_fraction, seed, p.cal_epitope_disjoint);
    case SplitProtocol::DistanceAware:
      return split_distance_aware(data, p.identity_ceiling, p.cal_fraction, seed, p.test_fraction);
  }
  throw ContractError("unknown protocol");
}

}  // namespace cap
