#pragma once

// End-to-end calibrated abstention: train the scorer, fit the temperature on
// calibration, fit the conformal threshold on calibration nonconformity,
// decide on every test point. Also the three-method report (raw baseline,
// temperature-scaled, selective) and decision TSV I/O.

#include <cap/calibrate.hpp>
#include <cap/common.hpp>
#include <cap/conformal.hpp>
#include <cap/eval.hpp>
#include <cap/refscorer.hpp>
#include <cap/seqdata.hpp>
#include <cap/splits.hpp>

#include <json.hpp>

#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cap {

enum class ScorerKind { Builtin, ExternalLogits };

struct ScorerConfig {
  ScorerKind kind = ScorerKind::Builtin;
  std::size_t kmer_size = 3;
  TrainHyper hyper;
  std::string logits_path;  // ExternalLogits only
};

struct CapResult {
  std::vector<SelectiveDecision> decisions;
  TemperatureModel temperature;
  ConformalRule rule;
  std::optional<LinearScorerModel> model;  // Builtin only
  std::string scorer_fingerprint;
  std::vector<ScoreRecord> cal_records;
  std::vector<ScoreRecord> test_records;
  std::vector<double> test_prob_calibrated;
};

inline void check_disjoint_splits(const Dataset& train, const Dataset& cal, const Dataset& test) {
  std::unordered_map<std::string, const char*> owner;
  for (auto [part, name] : {std::pair{&train, "train"}, std::pair{&cal, "cal"}, std::pair{&test, "test"}})
    for (const auto& e : *part) {
      auto [it, inserted] = owner.emplace(e.id, name);
      if (!inserted)
        throw ContractError("id '" + e.id + "' appears in both " + it->second + " and " + name + " splits");
    }
}

inline void check_against_manifest(const Dataset& train, const Dataset& cal, const Dataset& test,
                                   const SplitManifest& m) {
  auto check = [](const Dataset& d, const std::vector<std::string>& ids, const char* name) {
    std::unordered_set<std::string> allowed(ids.begin(), ids.end());
    for (const auto& e : d)
      if (!allowed.count(e.id))
        throw ContractError(std::string("id '") + e.id + "' is not in the manifest's " + name + " part");
  };
  m.check_disjoint();
  check(train, m.train_ids, "train");
  check(cal, m.cal_ids, "cal");
  check(test, m.test_ids, "test");
}

// Steps after scoring: temperature, threshold, decisions.
inline CapResult cap_from_records(std::vector<ScoreRecord> cal_records, std::vector<ScoreRecord> test_records,
                                  double epsilon) {
  CapResult r;
  r.temperature = fit_temperature(cal_records);
  std::vector<double> cal_scores;
  cal_scores.reserve(cal_records.size());
  std::vector<std::string> cal_ids;
  for (const auto& c : cal_records) {
    cal_scores.push_back(nonconformity_calibration(apply_temperature(c.logit, r.temperature.temperature), c.label));
    cal_ids.push_back(c.example_id);
  }
  r.rule = fit_threshold(cal_scores, epsilon);
  r.rule.calibration_fingerprint = fingerprint_ids(cal_ids);

  std::vector<CalibratedPrediction> preds;
  preds.reserve(test_records.size());
  for (const auto& t : test_records) {
    const double p = apply_temperature(t.logit, r.temperature.temperature);
    r.test_prob_calibrated.push_back(p);
    preds.push_back({t.example_id, p});
  }
  r.decisions = decide(preds, r.rule);
  r.cal_records = std::move(cal_records);
  r.test_records = std::move(test_records);
  return r;
}

inline CapResult run_cap(const Dataset& train, const Dataset& cal, const Dataset& test, double epsilon,
                         const ScorerConfig& scorer, const SplitManifest* manifest = nullptr) {
  check_disjoint_splits(train, cal, test);
  if (manifest) check_against_manifest(train, cal, test, *manifest);
  if (cal.empty()) throw ContractError("run_cap: empty calibration split");

  std::vector<ScoreRecord> cal_records, test_records;
  std::optional<LinearScorerModel> model;
  std::string scorer_fp;
  if (scorer.kind == ScorerKind::Builtin) {
    model = train_linear(train, scorer.kmer_size, scorer.hyper);
    if (model->train_fingerprint == fingerprint_ids(cal.ids()))
      throw ContractError("calibration split is identical to the scorer's training split");
    cal_records = score(*model, cal);
    test_records = score(*model, test);
    scorer_fp = model->fingerprint();
  } else {
    std::ifstream in(scorer.logits_path, std::ios::binary);
    if (!in) throw Error("cannot open '" + scorer.logits_path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    scorer_fp = fingerprint(text);
    std::istringstream a(text), b(text);
    cal_records = parse_logits(a, cal);
    test_records = parse_logits(b, test);
  }
  auto r = cap_from_records(std::move(cal_records), std::move(test_records), epsilon);
  r.model = std::move(model);
  r.scorer_fingerprint = std::move(scorer_fp);
  return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MethodMetrics {
  std::string method;
  std::size_t n = 0;
  double coverage = 1.0;
  std::optional<double> auroc, auprc, ece, brier, nll, error_rate;

  nlohmann::ordered_json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json j;
    j["method"] = method;
    j["n"] = n;
    j["coverage"] = coverage;
    j["auroc"] = opt(auroc);
    j["auprc"] = opt(auprc);
    j["ece"] = opt(ece);
    j["brier"] = opt(brier);
    j["nll"] = opt(nll);
    j["error_rate"] = opt(error_rate);
    return j;
  }
};

// Metrics over a (prob, label) set; ranking metrics are absent when a class
// is missing.
inline MethodMetrics score_set(std::string method, const std::vector<double>& probs, const std::vector<int>& labels,
                               double coverage) {
  MethodMetrics m;
  m.method = std::move(method);
  m.n = probs.size();
  m.coverage = coverage;
  if (probs.empty()) return m;
  std::size_t pos = 0, wrong = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    pos += labels[i] == 1 ? 1 : 0;
    wrong += predicted_label(probs[i]) != labels[i] ? 1 : 0;
  }
  if (pos > 0 && pos < probs.size()) {
    m.auroc = cap::auroc(probs, labels);
    m.auprc = cap::auprc(probs, labels);
  }
  m.ece = cap::ece(probs, labels).ece;
  m.brier = cap::brier(probs, labels);
  m.nll = cap::nll(probs, labels);
  m.error_rate = static_cast<double>(wrong) / static_cast<double>(probs.size());
  return m;
}

struct MethodReport {
  std::vector<MethodMetrics> rows;  // Baseline, +TempScale, CAP
  bool auroc_invariant = true;      // AUROC(raw) == AUROC(scaled), exactly
};

inline MethodReport evaluate_methods(const CapResult& r) {
  std::vector<double> raw, scaled, kept;
  std::vector<int> labels, kept_labels;
  for (std::size_t i = 0; i < r.test_records.size(); ++i) {
    raw.push_back(r.test_records[i].prob_raw);
    scaled.push_back(r.test_prob_calibrated[i]);
    labels.push_back(r.test_records[i].label);
    if (r.decisions[i].retained()) {
      kept.push_back(r.test_prob_calibrated[i]);
      kept_labels.push_back(r.test_records[i].label);
    }
  }
  MethodReport rep;
  rep.rows.push_back(score_set("Baseline", raw, labels, 1.0));
  rep.rows.push_back(score_set("+TempScale", scaled, labels, 1.0));
  const double cov = raw.empty() ? 0.0 : static_cast<double>(kept.size()) / static_cast<double>(raw.size());
  rep.rows.push_back(score_set("CAP", kept, kept_labels, cov));
  rep.auroc_invariant = rep.rows[0].auroc == rep.rows[1].auroc;
  return rep;
}

inline std::vector<CalibratedPrediction> calibrated_predictions(const CapResult& r) {
  std::vector<CalibratedPrediction> out;
  for (std::size_t i = 0; i < r.test_records.size(); ++i)
    out.push_back({r.test_records[i].example_id, r.test_prob_calibrated[i]});
  return out;
}

inline std::unordered_map<std::string, int> label_map(const std::vector<ScoreRecord>& records) {
  std::unordered_map<std::string, int> out;
  for (const auto& r : records) out.emplace(r.example_id, r.label);
  return out;
}

// ---------------------------------------------------------------------------
// Decision TSV
// ---------------------------------------------------------------------------

// Leading '#' lines carry provenance; the header follows.
inline void write_decisions(std::ostream& out, const std::vector<SelectiveDecision>& decisions,
                            const std::vector<std::string>& provenance = {}) {
  for (const auto& p : provenance) out << "# " << p << '\n';
  out << "example_id\tprob_calibrated\tnonconformity\tdecision\tpredicted_label\n";
  for (const auto& d : decisions) {
    out << d.example_id << '\t' << format_double(d.prob_calibrated) << '\t' << format_double(d.nonconformity) << '\t'
        << (d.retained() ? "predict" : "abstain") << '\t';
    if (d.retained()) out << d.predicted;
    out << '\n';
  }
}

inline std::vector<SelectiveDecision> parse_decisions(std::istream& in) {
  std::vector<SelectiveDecision> out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = strip_cr(line);
    if (text.empty() || text.front() == '#') continue;
    const auto f = split_tabs(text);
    if (!header) {
      if (f.size() != 5 || f[0] != "example_id") throw SchemaError("decision file: missing header row");
      header = true;
      continue;
    }
    if (f.size() != 5) throw RowError(line_no, "expected 5 fields");
    SelectiveDecision d;
    d.example_id = std::string(f[0]);
    bool ok1 = false, ok2 = false;
    d.prob_calibrated = parse_double(f[1], ok1);
    d.nonconformity = parse_double(f[2], ok2);
    if (!ok1 || !ok2) throw RowError(line_no, "malformed number");
    if (f[3] == "predict") {
      d.decision = DecisionKind::Predict;
      if (f[4] != "0" && f[4] != "1") throw RowError(line_no, "predicted_label must be 0 or 1");
      d.predicted = f[4] == "1" ? 1 : 0;
    } else if (f[3] == "abstain") {
      d.decision = DecisionKind::Abstain;
    } else {
      throw RowError(line_no, "decision must be 'predict' or 'abstain'");
    }
    out.push_back(std::move(d));
  }
  if (!header) throw SchemaError("decision file: missing header row");
  return out;
}

}  // namespace cap
