#pragma once

// Score sources. Either externally computed logits are joined to a dataset,
// or the built-in scorer is trained: a bag of overlapping k-mers (separate
// TCR and peptide namespaces) fed to a linear model fitted by full-batch
// gradient descent on class-weighted binary cross-entropy.

#include <cap/common.hpp>
#include <cap/seqdata.hpp>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cap {

struct ScoreRecord {
  std::string example_id;
  double logit = 0.0;
  double prob_raw = 0.5;
  int label = 0;
};

inline ScoreRecord make_record(std::string id, double logit, int label) {
  if (!std::isfinite(logit)) throw ContractError("non-finite logit for '" + id + "'");
  return {std::move(id), logit, sigmoid(logit), label};
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

inline constexpr std::string_view kTcrNamespace = "t:";
inline constexpr std::string_view kPeptideNamespace = "p:";

// Overlapping k-mer counts keyed by namespaced term ("t:CAS", "p:GIL"). The
// TCR side is cdr3a + "|" + cdr3b, or cdr3b alone when cdr3a is masked.
inline std::map<std::string, double> kmer_counts(const SequenceExample& e, std::size_t kmer_size,
                                                 bool mask_cdr3a = false) {
  if (kmer_size < 1) throw ContractError("kmer_size must be >= 1");
  std::map<std::string, double> out;
  auto add = [&](std::string_view ns, std::string_view s) {
    if (s.size() < kmer_size) return;
    for (std::size_t i = 0; i + kmer_size <= s.size(); ++i) {
      std::string key(ns);
      key.append(s.substr(i, kmer_size));
      out[key] += 1.0;
    }
  };
  const std::string tcr = mask_cdr3a ? e.cdr3b : e.cdr3a + "|" + e.cdr3b;
  add(kTcrNamespace, tcr);
  add(kPeptideNamespace, e.peptide);
  return out;
}

class Vocabulary {
 public:
  std::size_t size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }

  std::size_t add(const std::string& term) {
    auto [it, inserted] = index_.emplace(term, terms_.size());
    if (inserted) terms_.push_back(term);
    return it->second;
  }
  const std::size_t* find(const std::string& term) const {
    auto it = index_.find(term);
    return it == index_.end() ? nullptr : &it->second;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> terms_;
};

// (feature index, count) sorted by index.
using SparseVector = std::vector<std::pair<std::size_t, double>>;

inline SparseVector featurize(const SequenceExample& e, std::size_t kmer_size, const Vocabulary& vocab,
                              bool mask_cdr3a = false) {
  SparseVector out;
  for (const auto& [term, count] : kmer_counts(e, kmer_size, mask_cdr3a))
    if (const auto* idx = vocab.find(term)) out.emplace_back(*idx, count);
  std::sort(out.begin(), out.end());
  return out;
}

// Terms are indexed in order of first appearance over the dataset.
inline Vocabulary build_vocabulary(const Dataset& data, std::size_t kmer_size, bool mask_cdr3a = false) {
  Vocabulary v;
  for (const auto& e : data)
    for (const auto& [term, _] : kmer_counts(e, kmer_size, mask_cdr3a)) v.add(term);
  return v;
}

// ---------------------------------------------------------------------------
// Class-weighted BCE
// ---------------------------------------------------------------------------

struct ClassWeights {
  double w_pos = 1.0;
  double w_neg = 1.0;
};

// Inverse-frequency weights w+ = n / (2 n+), w- = n / (2 n-).
inline ClassWeights class_weights(std::size_t n_pos, std::size_t n_neg) {
  if (n_pos == 0 || n_neg == 0) throw ContractError("class_weights needs both classes present");
  const double n = static_cast<double>(n_pos + n_neg);
  return {n / (2.0 * static_cast<double>(n_pos)), n / (2.0 * static_cast<double>(n_neg))};
}

// L(w, b) = -(1/n) Σ [w+ y log σ(z) + w- (1-y) log(1-σ(z))] + (l2/2)‖w‖²,
// z = w·x + b. The bias is not penalised.
class WeightedBce {
 public:
  WeightedBce(const std::vector<SparseVector>& features, const std::vector<int>& labels, ClassWeights cw,
              double l2)
      : x_(features), y_(labels), cw_(cw), l2_(l2) {
    if (x_.size() != y_.size()) throw ContractError("features/labels length mismatch");
  }

  static double logit(const SparseVector& x, const std::vector<double>& w, double b) {
    double z = b;
    for (const auto& [j, v] : x) z += w[j] * v;
    return z;
  }

  double loss(const std::vector<double>& w, double b) const {
    double total = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) {
      const double z = logit(x_[i], w, b);
      // -log σ(z) = softplus(-z), -log(1-σ(z)) = softplus(z)
      total += y_[i] == 1 ? cw_.w_pos * softplus(-z) : cw_.w_neg * softplus(z);
    }
    double reg = 0.0;
    for (double v : w) reg += v * v;
    return total / static_cast<double>(x_.size()) + 0.5 * l2_ * reg;
  }

  // Returns the loss at (w, b) and writes the gradient.
  double gradient(const std::vector<double>& w, double b, std::vector<double>& gw, double& gb) const {
    gw.assign(w.size(), 0.0);
    gb = 0.0;
    const double inv_n = 1.0 / static_cast<double>(x_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) {
      const double z = logit(x_[i], w, b);
      const double p = sigmoid(z);
      double g;
      if (y_[i] == 1) {
        total += cw_.w_pos * softplus(-z);
        g = -cw_.w_pos * (1.0 - p);
      } else {
        total += cw_.w_neg * softplus(z);
        g = cw_.w_neg * p;
      }
      g *= inv_n;
      for (const auto& [j, v] : x_[i]) gw[j] += g * v;
      gb += g;
    }
    double reg = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      gw[j] += l2_ * w[j];
      reg += w[j] * w[j];
    }
    return total * inv_n + 0.5 * l2_ * reg;
  }

 private:
  const std::vector<SparseVector>& x_;
  const std::vector<int>& y_;
  ClassWeights cw_;
  double l2_;
};

// ---------------------------------------------------------------------------
// Built-in linear scorer
// ---------------------------------------------------------------------------

struct TrainHyper {
  double learning_rate = 0.1;
  std::size_t epochs = 300;
  double l2 = 1e-4;
  // Recorded for provenance. Zero initialisation and full-batch updates leave
  // nothing random in training.
  std::uint64_t seed = 0;
  bool mask_cdr3a = false;
};

struct LinearScorerModel {
  std::size_t kmer_size = 3;
  TrainHyper hyper;
  Vocabulary vocabulary;
  std::vector<double> weights;
  double bias = 0.0;
  ClassWeights class_weights;
  std::string train_fingerprint;
  std::vector<double> loss_history;  // [0] initial, [k] after epoch k

  double final_loss() const { return loss_history.empty() ? 0.0 : loss_history.back(); }

  double logit(const SequenceExample& e) const {
    return WeightedBce::logit(featurize(e, kmer_size, vocabulary, hyper.mask_cdr3a), weights, bias);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "kmer_linear";
    j["kmer_size"] = kmer_size;
    j["hyper"] = {{"learning_rate", hyper.learning_rate},
                  {"epochs", hyper.epochs},
                  {"l2", hyper.l2},
                  {"seed", hyper.seed},
                  {"mask_cdr3a", hyper.mask_cdr3a}};
    j["class_weights"] = {{"w_pos", class_weights.w_pos}, {"w_neg", class_weights.w_neg}};
    j["train_fingerprint"] = train_fingerprint;
    j["final_loss"] = final_loss();
    j["bias"] = bias;
    auto features = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < weights.size(); ++i)
      features.push_back(nlohmann::ordered_json::array({vocabulary.terms()[i], weights[i]}));
    j["features"] = std::move(features);
    return j;
  }

  std::string dump() const { return to_json().dump(1) + "\n"; }
  std::string fingerprint() const { return cap::fingerprint(dump()); }

  static LinearScorerModel from_json(const nlohmann::json& j) {
    LinearScorerModel m;
    m.kmer_size = j.at("kmer_size").get<std::size_t>();
    const auto& h = j.at("hyper");
    m.hyper.learning_rate = h.at("learning_rate").get<double>();
    m.hyper.epochs = h.at("epochs").get<std::size_t>();
    m.hyper.l2 = h.at("l2").get<double>();
    m.hyper.seed = h.at("seed").get<std::uint64_t>();
    m.hyper.mask_cdr3a = h.at("mask_cdr3a").get<bool>();
    m.class_weights.w_pos = j.at("class_weights").at("w_pos").get<double>();
    m.class_weights.w_neg = j.at("class_weights").at("w_neg").get<double>();
    m.train_fingerprint = j.at("train_fingerprint").get<std::string>();
    m.bias = j.at("bias").get<double>();
    for (const auto& f : j.at("features")) {
      m.vocabulary.add(f.at(0).get<std::string>());
      m.weights.push_back(f.at(1).get<double>());
    }
    m.loss_history = {j.at("final_loss").get<double>()};
    return m;
  }
};

inline LinearScorerModel train_linear(const Dataset& train, std::size_t kmer_size = 3,
                                      const TrainHyper& hyper = {}) {
  if (train.empty()) throw ContractError("train_linear: empty training set");
  if (kmer_size < 1) throw ContractError("kmer_size must be >= 1");
  LinearScorerModel m;
  m.kmer_size = kmer_size;
  m.hyper = hyper;
  m.class_weights = class_weights(train.positives(), train.negatives());
  m.train_fingerprint = fingerprint_ids(train.ids());
  m.vocabulary = build_vocabulary(train, kmer_size, hyper.mask_cdr3a);
  m.weights.assign(m.vocabulary.size(), 0.0);

  std::vector<SparseVector> x(train.size());
  std::vector<int> y(train.size());
  parallel_for(train.size(), [&](std::size_t i) {
    x[i] = featurize(train[i], kmer_size, m.vocabulary, hyper.mask_cdr3a);
    y[i] = train[i].label;
  });
  const WeightedBce objective(x, y, m.class_weights, hyper.l2);

  std::vector<double> gw;
  double gb = 0.0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double loss = objective.gradient(m.weights, m.bias, gw, gb);
    m.loss_history.push_back(loss);
    for (std::size_t j = 0; j < m.weights.size(); ++j) m.weights[j] -= hyper.learning_rate * gw[j];
    m.bias -= hyper.learning_rate * gb;
  }
  m.loss_history.push_back(objective.loss(m.weights, m.bias));
  if (!std::isfinite(m.loss_history.back()))
    throw ContractError("training diverged (loss is not finite); use a smaller learning rate");
  return m;
}

inline std::vector<ScoreRecord> score(const LinearScorerModel& model, const Dataset& data) {
  std::vector<ScoreRecord> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    out[i] = make_record(data[i].id, model.logit(data[i]), data[i].label);
  });
  return out;
}

// ---------------------------------------------------------------------------
// External logits
// ---------------------------------------------------------------------------

// Lines are "example_id<TAB>logit". Lines starting with '#' and a leading
// "example_id<TAB>logit" header are skipped. Ids not in `data` are ignored;
// every dataset id must appear exactly once.
inline std::vector<ScoreRecord> parse_logits(std::istream& in, const Dataset& data) {
  std::unordered_map<std::string, double> logits;
  std::string line;
  std::size_t line_no = 0;
  bool seen_content = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = strip_cr(line);
    if (text.empty() || text.front() == '#') continue;
    const auto f = split_tabs(text);
    if (!seen_content) {
      seen_content = true;
      if (f.size() == 2 && f[0] == "example_id") continue;
    }
    if (f.size() != 2) throw RowError(line_no, "expected 2 fields (example_id, logit)");
    const std::string id(f[0]);
    bool ok = false;
    const double z = parse_double(f[1], ok);
    if (!ok || !std::isfinite(z)) throw Error("non-finite or malformed logit for id '" + id + "'");
    if (!logits.emplace(id, z).second) throw Error("duplicate logit for id '" + id + "'");
  }
  std::vector<ScoreRecord> out;
  out.reserve(data.size());
  for (const auto& e : data) {
    auto it = logits.find(e.id);
    if (it == logits.end()) throw Error("missing logit for id '" + e.id + "'");
    out.push_back(make_record(e.id, it->second, e.label));
  }
  return out;
}

inline std::vector<ScoreRecord> ingest_logits(const std::string& path, const Dataset& data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return parse_logits(in, data);
}

inline void write_logits(std::ostream& out, const std::vector<ScoreRecord>& records) {
  out << "example_id\tlogit\n";
  for (const auto& r : records) out << r.example_id << '\t' << format_double(r.logit) << '\n';
}

}  // namespace cap
