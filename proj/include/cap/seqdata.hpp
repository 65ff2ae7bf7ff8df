#pragma once

// Sequence-pair data model: TSV ingestion and export, greedy identity
// deduplication, and synthetic non-cognate negative pairs.

#include <cap/common.hpp>
#include <cap/distance.hpp>

#include <array>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cap {

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

inline bool is_amino_acid(char c) { return kAminoAcids.find(c) != std::string_view::npos; }

struct SequenceExample {
  std::string id;
  std::string cdr3a;
  std::string cdr3b;
  std::string peptide;
  std::string epitope_id;
  int label = 0;

  // cdr3a‖cdr3b‖peptide, the key for identity deduplication.
  std::string concatenation() const { return cdr3a + cdr3b + peptide; }

  friend bool operator==(const SequenceExample&, const SequenceExample&) = default;
};

// Ordered, immutable collection of examples. Construction validates the
// invariants (unique ids, residue alphabet, one peptide per epitope_id).
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<SequenceExample> examples) : examples_(std::move(examples)) {
    validate();
  }

  const std::vector<SequenceExample>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const SequenceExample& operator[](std::size_t i) const { return examples_[i]; }
  auto begin() const { return examples_.begin(); }
  auto end() const { return examples_.end(); }

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& e : examples_) n += e.label == 1 ? 1 : 0;
    return n;
  }
  std::size_t negatives() const { return size() - positives(); }

  double positive_rate() const {
    return empty() ? 0.0 : static_cast<double>(positives()) / static_cast<double>(size());
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(size());
    for (const auto& e : examples_) out.push_back(e.id);
    return out;
  }

  // Examples whose id is in `ids`, in dataset order.
  Dataset subset(const std::vector<std::string>& ids) const {
    std::unordered_set<std::string> keep(ids.begin(), ids.end());
    std::vector<SequenceExample> out;
    for (const auto& e : examples_)
      if (keep.count(e.id)) out.push_back(e);
    return Dataset(std::move(out));
  }

 private:
  void validate() const {
    std::unordered_set<std::string> seen;
    std::unordered_map<std::string, std::string> peptide_of;
    for (const auto& e : examples_) {
      if (!seen.insert(e.id).second) throw ContractError("duplicate example id '" + e.id + "'");
      for (const std::string* field : {&e.cdr3a, &e.cdr3b, &e.peptide}) {
        if (field->empty()) throw ContractError("example '" + e.id + "' has an empty sequence");
        for (char c : *field)
          if (!is_amino_acid(c))
            throw ContractError("example '" + e.id + "' has invalid residue '" +
                                std::string(1, c) + "'");
      }
      if (e.label != 0 && e.label != 1)
        throw ContractError("example '" + e.id + "' has non-binary label");
      auto [it, inserted] = peptide_of.emplace(e.epitope_id, e.peptide);
      if (!inserted && it->second != e.peptide)
        throw ContractError("epitope '" + e.epitope_id + "' maps to two peptides");
    }
  }

  std::vector<SequenceExample> examples_;
};

// Column names for TSV ingestion. `id` may be absent from the file, in which
// case ids are the 1-based data row index.
struct TsvSchema {
  std::string id = "id";
  std::string cdr3a = "cdr3a";
  std::string cdr3b = "cdr3b";
  std::string peptide = "peptide";
  std::string epitope = "epitope";
  std::string label = "label";
};

namespace detail {

inline std::string normalize_residues(std::string_view raw, std::size_t line, const char* field) {
  std::string out(raw);
  if (out.empty()) throw RowError(line, std::string("empty ") + field);
  for (char& c : out) {
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (!is_amino_acid(c))
      throw RowError(line, std::string("invalid residue '") + c + "' in " + field);
  }
  return out;
}

}  // namespace detail

inline Dataset parse_tsv(std::istream& in, const TsvSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty input: missing header row");
  const auto header = split_tabs(strip_cr(line));
  auto column = [&](const std::string& name, bool required) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    if (required) throw SchemaError("missing column '" + name + "'");
    return -1;
  };
  const auto c_id = column(schema.id, false);
  const auto c_a = column(schema.cdr3a, true);
  const auto c_b = column(schema.cdr3b, true);
  const auto c_p = column(schema.peptide, true);
  const auto c_e = column(schema.epitope, true);
  const auto c_l = column(schema.label, true);

  std::vector<SequenceExample> rows;
  std::unordered_set<std::string> ids;
  std::unordered_map<std::string, std::string> peptide_of;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = strip_cr(line);
    if (text.empty()) continue;
    const auto f = split_tabs(text);
    if (f.size() != header.size())
      throw RowError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                  std::to_string(f.size()));
    SequenceExample e;
    e.id = c_id >= 0 ? std::string(f[c_id]) : std::to_string(rows.size() + 1);
    if (e.id.empty()) throw RowError(line_no, "empty id");
    e.cdr3a = detail::normalize_residues(f[c_a], line_no, "cdr3a");
    e.cdr3b = detail::normalize_residues(f[c_b], line_no, "cdr3b");
    e.peptide = detail::normalize_residues(f[c_p], line_no, "peptide");
    e.epitope_id = std::string(f[c_e]);
    if (e.epitope_id.empty()) throw RowError(line_no, "empty epitope id");
    const auto lab = f[c_l];
    if (lab == "1")
      e.label = 1;
    else if (lab == "0")
      e.label = 0;
    else
      throw RowError(line_no, "non-binary label '" + std::string(lab) + "'");
    if (!ids.insert(e.id).second) throw RowError(line_no, "duplicate id '" + e.id + "'");
    auto [it, inserted] = peptide_of.emplace(e.epitope_id, e.peptide);
    if (!inserted && it->second != e.peptide)
      throw RowError(line_no, "epitope '" + e.epitope_id + "' already has peptide " + it->second);
    rows.push_back(std::move(e));
  }
  return Dataset(std::move(rows));
}

inline Dataset ingest_tsv(const std::string& path, const TsvSchema& schema = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return parse_tsv(in, schema);
}

// Writes the schema's columns with id first. Output of parse_tsv on this text
// reproduces the dataset exactly.
inline void write_tsv(std::ostream& out, const Dataset& data, const TsvSchema& schema = {}) {
  out << schema.id << '\t' << schema.cdr3a << '\t' << schema.cdr3b << '\t' << schema.peptide
      << '\t' << schema.epitope << '\t' << schema.label << '\n';
  for (const auto& e : data)
    out << e.id << '\t' << e.cdr3a << '\t' << e.cdr3b << '\t' << e.peptide << '\t'
        << e.epitope_id << '\t' << e.label << '\n';
}

inline std::string to_tsv(const Dataset& data, const TsvSchema& schema = {}) {
  std::ostringstream os;
  write_tsv(os, data, schema);
  return os.str();
}

// Greedy single pass in dataset order: an example is dropped when its
// concatenation reaches `identity_threshold` against any retained example.
// Worst case O(n²) distance evaluations; each evaluation is banded by the
// threshold. The scan over retained examples is parallel, but the keep/drop
// decision sequence is the serial one.
inline Dataset deduplicate(const Dataset& data, double identity_threshold) {
  if (!(identity_threshold > 0.0 && identity_threshold <= 1.0))
    throw ContractError("identity_threshold must be in (0, 1]");
  std::vector<SequenceExample> kept;
  std::vector<std::string> keys;
  std::unordered_set<std::string> exact;
  constexpr std::size_t kParallelMin = 4096;
  for (const auto& e : data) {
    auto key = e.concatenation();
    bool duplicate = exact.count(key) > 0;
    if (!duplicate && identity_threshold < 1.0) {
      if (keys.size() < kParallelMin) {
        for (const auto& k : keys)
          if (identity_at_least(key, k, identity_threshold)) {
            duplicate = true;
            break;
          }
      } else {
        std::atomic<bool> hit{false};
        const unsigned threads = default_thread_count();
        const std::size_t chunk = (keys.size() + threads - 1) / threads;
        parallel_for(
            threads,
            [&](std::size_t t) {
              const std::size_t lo = t * chunk, hi = std::min(keys.size(), lo + chunk);
              for (std::size_t i = lo; i < hi && !hit.load(std::memory_order_relaxed); ++i)
                if (identity_at_least(key, keys[i], identity_threshold)) hit = true;
            },
            threads);
        duplicate = hit.load();
      }
    }
    if (duplicate) continue;
    exact.insert(key);
    keys.push_back(std::move(key));
    kept.push_back(e);
  }
  return Dataset(std::move(kept));
}

// Builds label-0 pairs by seeded uniform sampling, without replacement, of
// (TCR, epitope) combinations where the TCR is not a known binder of the
// epitope. Returns positives followed by the generated negatives, whose ids
// are "neg<N>" (suffixed further on the rare collision with an input id).
inline Dataset generate_negatives(const Dataset& positives, double target_positive_rate,
                                  std::uint64_t seed) {
  if (!(target_positive_rate > 0.0 && target_positive_rate < 1.0))
    throw ContractError("target_positive_rate must be in (0, 1)");
  for (const auto& e : positives)
    if (e.label != 1) throw ContractError("generate_negatives expects only label=1 examples");

  // Distinct TCRs and epitopes in first-appearance order.
  std::vector<std::pair<std::string, std::string>> tcrs;
  std::map<std::pair<std::string, std::string>, std::size_t> tcr_index;
  std::vector<std::string> epitopes, peptides;
  std::unordered_map<std::string, std::size_t> epitope_index;
  std::vector<std::set<std::size_t>> binders;
  for (const auto& e : positives) {
    auto tk = std::make_pair(e.cdr3a, e.cdr3b);
    auto [tit, tnew] = tcr_index.emplace(tk, tcrs.size());
    if (tnew) {
      tcrs.push_back(tk);
      binders.emplace_back();
    }
    auto [eit, enew] = epitope_index.emplace(e.epitope_id, epitopes.size());
    if (enew) {
      epitopes.push_back(e.epitope_id);
      peptides.push_back(e.peptide);
    }
    binders[tit->second].insert(eit->second);
  }
  if (epitopes.size() < 2)
    throw ContractError("generate_negatives needs at least 2 distinct epitopes");

  const double n_pos = static_cast<double>(positives.size());
  const auto wanted = static_cast<std::size_t>(
      ceil_tolerant(n_pos * (1.0 - target_positive_rate) / target_positive_rate));

  std::uint64_t available = 0;
  for (const auto& b : binders) available += epitopes.size() - b.size();
  if (wanted > available)
    throw ContractError("requested " + std::to_string(wanted) + " negatives but only " +
                        std::to_string(available) + " non-cognate pairs exist");

  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  chosen.reserve(wanted);
  if (wanted * 2 <= available) {
    // Sparse request: rejection sampling on the full grid.
    std::unordered_set<std::uint64_t> used;
    const std::uint64_t n_ep = epitopes.size();
    while (chosen.size() < wanted) {
      const auto t = static_cast<std::size_t>(uniform_index(rng, tcrs.size()));
      const auto p = static_cast<std::size_t>(uniform_index(rng, n_ep));
      if (binders[t].count(p)) continue;
      if (!used.insert(t * n_ep + p).second) continue;
      chosen.emplace_back(t, p);
    }
  } else {
    // Dense request: enumerate, then a partial Fisher-Yates.
    std::vector<std::pair<std::size_t, std::size_t>> all;
    all.reserve(available);
    for (std::size_t t = 0; t < tcrs.size(); ++t)
      for (std::size_t p = 0; p < epitopes.size(); ++p)
        if (!binders[t].count(p)) all.emplace_back(t, p);
    for (std::size_t i = 0; i < wanted; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform_index(rng, all.size() - i));
      std::swap(all[i], all[j]);
      chosen.push_back(all[i]);
    }
  }

  std::unordered_set<std::string> taken;
  for (const auto& e : positives) taken.insert(e.id);
  std::vector<SequenceExample> out(positives.examples());
  out.reserve(positives.size() + wanted);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    auto [t, p] = chosen[i];
    SequenceExample e;
    e.id = "neg" + std::to_string(i + 1);
    while (taken.count(e.id)) e.id += "_";
    taken.insert(e.id);
    e.cdr3a = tcrs[t].first;
    e.cdr3b = tcrs[t].second;
    e.peptide = peptides[p];
    e.epitope_id = epitopes[p];
    e.label = 0;
    out.push_back(std::move(e));
  }
  return Dataset(std::move(out));
}

}  // namespace cap
