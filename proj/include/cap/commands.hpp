#pragma once

// Batch commands behind the cap CLI. Each command reads a RunConfig, writes
// machine-readable reports into the output directory and prints a short
// human summary. Reports embed the full config and the fingerprints of the
// manifest and scorer they derive from; wall-clock timestamps go only to a
// sidecar <command>.log.

#include <cap/pipeline.hpp>
#include <cap/synth.hpp>

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace cap {

// Invalid configuration; the message starts with the offending field path.
struct UsageError : Error {
  using Error::Error;
};

struct SimulateConfig {
  std::vector<std::size_t> n_cal_sizes{500, 2000, 8000};
  std::size_t n_test = 5000;
  double miscalibration_temperature = 3.0;
  double base_positive_rate = 0.045;
  double epsilon = 0.2;
  std::size_t trials = 200;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string dataset_path;
  TsvSchema schema;
  std::optional<double> dedup_identity = 0.9;
  std::optional<double> negatives_target_rate;
  std::uint64_t negatives_seed = 0;
  SplitProtocol protocol = SplitProtocol::Random;
  SplitParameters split;
  std::uint64_t split_seed = 0;
  std::string manifest_path;
  ScorerConfig scorer;
  double epsilon = 0.2;
  std::vector<double> coverage_grid = default_coverage_grid();
  SimulateConfig simulate;
  std::string decisions_path;
  std::string output_dir = "cap_out";

  nlohmann::ordered_json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json j;
    j["dataset"] = {{"path", dataset_path},
                    {"schema",
                     {{"id", schema.id},
                      {"cdr3a", schema.cdr3a},
                      {"cdr3b", schema.cdr3b},
                      {"peptide", schema.peptide},
                      {"epitope", schema.epitope},
                      {"label", schema.label}}}};
    j["preprocess"] = {{"dedup_identity", opt(dedup_identity)},
                       {"negatives_target_rate", opt(negatives_target_rate)},
                       {"negatives_seed", negatives_seed}};
    j["split"] = {{"protocol", to_string(protocol)},
                  {"seed", split_seed},
                  {"fractions", split.fractions},
                  {"k_test_epitopes", split.k_test_epitopes},
                  {"cal_fraction", split.cal_fraction},
                  {"cal_epitope_disjoint", split.cal_epitope_disjoint},
                  {"identity_ceiling", split.identity_ceiling},
                  {"test_fraction", split.test_fraction},
                  {"manifest", manifest_path}};
    j["scorer"] = {{"kind", scorer.kind == ScorerKind::Builtin ? "builtin" : "external"},
                   {"kmer_size", scorer.kmer_size},
                   {"learning_rate", scorer.hyper.learning_rate},
                   {"epochs", scorer.hyper.epochs},
                   {"l2", scorer.hyper.l2},
                   {"seed", scorer.hyper.seed},
                   {"mask_cdr3a", scorer.hyper.mask_cdr3a},
                   {"logits_path", scorer.logits_path}};
    j["conformal"] = {{"epsilon", epsilon}};
    j["sweep"] = {{"grid", coverage_grid}};
    j["simulate"] = {{"n_cal_sizes", simulate.n_cal_sizes},
                     {"n_test", simulate.n_test},
                     {"miscalibration_temperature", simulate.miscalibration_temperature},
                     {"base_positive_rate", simulate.base_positive_rate},
                     {"epsilon", simulate.epsilon},
                     {"trials", simulate.trials},
                     {"seed", simulate.seed}};
    j["metrics"] = {{"decisions", decisions_path}};
    j["output_dir"] = output_dir;
    return j;
  }
};

namespace detail {

inline const std::set<std::string>& nullable_fields() {
  static const std::set<std::string> f{"preprocess.dedup_identity", "preprocess.negatives_target_rate"};
  return f;
}

inline const char* json_kind(const nlohmann::json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

// Overlays `user` onto `base`, rejecting unknown keys and type changes.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) throw UsageError((path.empty() ? std::string("config") : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string field = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw UsageError(field + ": unknown field");
    auto& slot = base[it.key()];
    const auto& value = it.value();
    if (slot.is_object()) {
      merge_strict(slot, value, field);
      continue;
    }
    const bool nullable = nullable_fields().count(field) > 0;
    const bool same = std::string(json_kind(slot)) == json_kind(value);
    const bool ok = same || (nullable && (value.is_null() || value.is_number()));
    if (!ok) throw UsageError(field + ": expected " + json_kind(slot) + ", got " + json_kind(value));
    slot = value;
  }
}

template <typename T>
T field(const nlohmann::json& root, const std::string& path) {
  const nlohmann::json* node = &root;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!node->is_number_unsigned()) throw UsageError(path + ": expected a non-negative integer, got " + node->dump());
  }
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError(path + ": invalid value " + node->dump());
  }
}

inline std::optional<double> optional_field(const nlohmann::json& root, const std::string& path) {
  const nlohmann::json* node = &root;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  if (node->is_null()) return std::nullopt;
  return field<double>(root, path);
}

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw UsageError(path + ": " + what);
}

}  // namespace detail

// Builds a config from defaults overlaid with `user` (a partial config
// document). Every failure names the field path.
inline RunConfig parse_config(const nlohmann::json& user) {
  using detail::field;
  using detail::require;
  nlohmann::json merged = nlohmann::json::parse(RunConfig{}.to_json().dump());
  detail::merge_strict(merged, user, "");

  RunConfig c;
  c.dataset_path = field<std::string>(merged, "dataset.path");
  c.schema.id = field<std::string>(merged, "dataset.schema.id");
  c.schema.cdr3a = field<std::string>(merged, "dataset.schema.cdr3a");
  c.schema.cdr3b = field<std::string>(merged, "dataset.schema.cdr3b");
  c.schema.peptide = field<std::string>(merged, "dataset.schema.peptide");
  c.schema.epitope = field<std::string>(merged, "dataset.schema.epitope");
  c.schema.label = field<std::string>(merged, "dataset.schema.label");

  c.dedup_identity = detail::optional_field(merged, "preprocess.dedup_identity");
  if (c.dedup_identity)
    require(*c.dedup_identity > 0.0 && *c.dedup_identity <= 1.0, "preprocess.dedup_identity", "must be in (0, 1]");
  c.negatives_target_rate = detail::optional_field(merged, "preprocess.negatives_target_rate");
  if (c.negatives_target_rate)
    require(*c.negatives_target_rate > 0.0 && *c.negatives_target_rate < 1.0, "preprocess.negatives_target_rate",
            "must be in (0, 1)");
  c.negatives_seed = field<std::uint64_t>(merged, "preprocess.negatives_seed");

  try {
    c.protocol = parse_protocol(field<std::string>(merged, "split.protocol"));
  } catch (const ContractError& e) {
    throw UsageError(std::string("split.protocol: ") + e.what());
  }
  c.split_seed = field<std::uint64_t>(merged, "split.seed");
  c.split.fractions = field<std::array<double, 3>>(merged, "split.fractions");
  c.split.k_test_epitopes = field<std::size_t>(merged, "split.k_test_epitopes");
  c.split.cal_fraction = field<double>(merged, "split.cal_fraction");
  require(c.split.cal_fraction > 0.0 && c.split.cal_fraction < 1.0, "split.cal_fraction", "must be in (0, 1)");
  c.split.cal_epitope_disjoint = field<bool>(merged, "split.cal_epitope_disjoint");
  c.split.identity_ceiling = field<double>(merged, "split.identity_ceiling");
  require(c.split.identity_ceiling > 0.0 && c.split.identity_ceiling < 1.0, "split.identity_ceiling",
          "must be in (0, 1)");
  c.split.test_fraction = field<double>(merged, "split.test_fraction");
  require(c.split.test_fraction > 0.0 && c.split.test_fraction < 1.0, "split.test_fraction", "must be in (0, 1)");
  c.manifest_path = field<std::string>(merged, "split.manifest");

  const auto kind = field<std::string>(merged, "scorer.kind");
  require(kind == "builtin" || kind == "external", "scorer.kind", "must be 'builtin' or 'external'");
  c.scorer.kind = kind == "builtin" ? ScorerKind::Builtin : ScorerKind::ExternalLogits;
  c.scorer.kmer_size = field<std::size_t>(merged, "scorer.kmer_size");
  require(c.scorer.kmer_size >= 1, "scorer.kmer_size", "must be >= 1");
  c.scorer.hyper.learning_rate = field<double>(merged, "scorer.learning_rate");
  require(c.scorer.hyper.learning_rate >= 0.0, "scorer.learning_rate", "must be >= 0");
  c.scorer.hyper.epochs = field<std::size_t>(merged, "scorer.epochs");
  c.scorer.hyper.l2 = field<double>(merged, "scorer.l2");
  require(c.scorer.hyper.l2 >= 0.0, "scorer.l2", "must be >= 0");
  c.scorer.hyper.seed = field<std::uint64_t>(merged, "scorer.seed");
  c.scorer.hyper.mask_cdr3a = field<bool>(merged, "scorer.mask_cdr3a");
  c.scorer.logits_path = field<std::string>(merged, "scorer.logits_path");
  if (c.scorer.kind == ScorerKind::ExternalLogits)
    require(!c.scorer.logits_path.empty(), "scorer.logits_path", "required when scorer.kind is 'external'");

  c.epsilon = field<double>(merged, "conformal.epsilon");
  require(c.epsilon > 0.0 && c.epsilon < 1.0, "conformal.epsilon", "must be in (0, 1)");
  c.coverage_grid = field<std::vector<double>>(merged, "sweep.grid");
  require(!c.coverage_grid.empty(), "sweep.grid", "must not be empty");
  for (double g : c.coverage_grid) require(g > 0.0 && g <= 1.0, "sweep.grid", "values must be in (0, 1]");

  c.simulate.n_cal_sizes = field<std::vector<std::size_t>>(merged, "simulate.n_cal_sizes");
  require(!c.simulate.n_cal_sizes.empty(), "simulate.n_cal_sizes", "must not be empty");
  for (auto n : c.simulate.n_cal_sizes) require(n >= 1, "simulate.n_cal_sizes", "values must be >= 1");
  c.simulate.n_test = field<std::size_t>(merged, "simulate.n_test");
  require(c.simulate.n_test >= 1, "simulate.n_test", "must be >= 1");
  c.simulate.miscalibration_temperature = field<double>(merged, "simulate.miscalibration_temperature");
  require(c.simulate.miscalibration_temperature > 0.0, "simulate.miscalibration_temperature", "must be > 0");
  c.simulate.base_positive_rate = field<double>(merged, "simulate.base_positive_rate");
  c.simulate.epsilon = field<double>(merged, "simulate.epsilon");
  require(c.simulate.epsilon > 0.0 && c.simulate.epsilon < 1.0, "simulate.epsilon", "must be in (0, 1)");
  c.simulate.trials = field<std::size_t>(merged, "simulate.trials");
  require(c.simulate.trials >= 1, "simulate.trials", "must be >= 1");
  c.simulate.seed = field<std::uint64_t>(merged, "simulate.seed");
  c.decisions_path = field<std::string>(merged, "metrics.decisions");
  c.output_dir = field<std::string>(merged, "output_dir");
  require(!c.output_dir.empty(), "output_dir", "must not be empty");
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

// "a.b.c=value" overrides; the value is parsed as JSON and falls back to a
// plain string.
inline void apply_override(nlohmann::json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key.path=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &user;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = nlohmann::json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

// ---------------------------------------------------------------------------
// Shared stages
// ---------------------------------------------------------------------------

namespace detail {

inline std::filesystem::path output_path(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.output_dir);
  return std::filesystem::path(c.output_dir) / name;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << content;
}

inline void log_invocation(const RunConfig& c, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ofstream log(output_path(c, command + ".log"), std::ios::app);
  log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << command << " dataset=" << c.dataset_path << '\n';
}

}  // namespace detail

inline Dataset load_prepared_dataset(const RunConfig& c) {
  if (c.dataset_path.empty()) throw UsageError("dataset.path: required");
  if (!std::filesystem::exists(c.dataset_path)) throw Error("dataset file not found: '" + c.dataset_path + "'");
  Dataset data = ingest_tsv(c.dataset_path, c.schema);
  if (c.dedup_identity) data = deduplicate(data, *c.dedup_identity);
  if (c.negatives_target_rate) data = generate_negatives(data, *c.negatives_target_rate, c.negatives_seed);
  return data;
}

inline SplitManifest load_or_make_manifest(const RunConfig& c, const Dataset& data) {
  if (!c.manifest_path.empty()) {
    if (!std::filesystem::exists(c.manifest_path)) throw Error("manifest file not found: '" + c.manifest_path + "'");
    return SplitManifest::from_json(read_json_file(c.manifest_path));
  }
  return make_split(data, c.protocol, c.split, c.split_seed);
}

struct PipelineRun {
  Dataset data;
  SplitManifest manifest;
  Dataset train, cal, test;
  CapResult result;
};

inline PipelineRun run_pipeline(const RunConfig& c) {
  PipelineRun p;
  p.data = load_prepared_dataset(c);
  p.manifest = load_or_make_manifest(c, p.data);
  p.train = p.data.subset(p.manifest.train_ids);
  p.cal = p.data.subset(p.manifest.cal_ids);
  p.test = p.data.subset(p.manifest.test_ids);
  p.result = run_cap(p.train, p.cal, p.test, c.epsilon, c.scorer, &p.manifest);
  return p;
}

inline std::vector<std::string> provenance_lines(const PipelineRun& p) {
  return {"manifest_fingerprint=" + p.manifest.fingerprint(), "scorer_fingerprint=" + p.result.scorer_fingerprint};
}

inline nlohmann::ordered_json curve_json(const CoverageRiskCurve& curve) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  auto arr = nlohmann::ordered_json::array();
  for (const auto& pt : curve.points)
    arr.push_back({{"target_coverage", pt.target_coverage},
                   {"coverage", pt.coverage},
                   {"error_rate", opt(pt.risk)},
                   {"ece", opt(pt.ece)},
                   {"auprc", opt(pt.auprc)},
                   {"abstained", pt.abstained},
                   {"retained", pt.retained}});
  return arr;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline SplitManifest cmd_split(const RunConfig& c, std::ostream& summary) {
  const Dataset data = load_prepared_dataset(c);
  const SplitManifest m = make_split(data, c.protocol, c.split, c.split_seed);
  detail::write_file(detail::output_path(c, "manifest.json"), m.dump());
  detail::log_invocation(c, "split");
  summary << "split " << to_string(m.protocol) << ": train=" << m.train_ids.size() << " cal=" << m.cal_ids.size()
          << " test=" << m.test_ids.size() << " (of " << data.size() << ")\n"
          << "manifest fingerprint " << m.fingerprint() << '\n';
  return m;
}

struct RunOutputs {
  PipelineRun run;
  MethodReport report;
  CoverageRiskCurve curve;
  std::string metrics_json;
  std::string decisions_tsv;
};

inline RunOutputs cmd_run(const RunConfig& c, std::ostream& summary) {
  RunOutputs o;
  o.run = run_pipeline(c);
  const auto& r = o.run.result;
  o.report = evaluate_methods(r);
  o.curve = coverage_risk_sweep(calibrated_predictions(r), label_map(r.test_records), c.coverage_grid, "test");

  auto split_info = [](const Dataset& d) {
    return nlohmann::ordered_json{{"n", d.size()}, {"positive_rate", d.positive_rate()}};
  };
  nlohmann::ordered_json j;
  j["config"] = c.to_json();
  j["manifest_fingerprint"] = o.run.manifest.fingerprint();
  j["scorer_fingerprint"] = r.scorer_fingerprint;
  j["calibration_fingerprint"] = r.rule.calibration_fingerprint;
  j["protocol"] = to_string(o.run.manifest.protocol);
  j["splits"] = {{"train", split_info(o.run.train)}, {"cal", split_info(o.run.cal)}, {"test", split_info(o.run.test)}};
  j["temperature"] = r.temperature.to_json();
  j["conformal_rule"] = r.rule.to_json();
  auto rows = nlohmann::ordered_json::array();
  for (const auto& m : o.report.rows) rows.push_back(m.to_json());
  j["methods"] = rows;
  j["auroc_invariant_under_temperature"] = o.report.auroc_invariant;
  j["coverage_risk"] = curve_json(o.curve);
  o.metrics_json = j.dump(2) + "\n";

  std::ostringstream dec;
  write_decisions(dec, r.decisions, provenance_lines(o.run));
  o.decisions_tsv = dec.str();

  detail::write_file(detail::output_path(c, "metrics.json"), o.metrics_json);
  detail::write_file(detail::output_path(c, "decisions.tsv"), o.decisions_tsv);
  detail::write_file(detail::output_path(c, "manifest.json"), o.run.manifest.dump());
  if (r.model) detail::write_file(detail::output_path(c, "model.json"), r.model->dump());
  nlohmann::ordered_json calib;
  calib["manifest_fingerprint"] = o.run.manifest.fingerprint();
  calib["scorer_fingerprint"] = r.scorer_fingerprint;
  calib["temperature"] = r.temperature.to_json();
  calib["conformal_rule"] = r.rule.to_json();
  detail::write_file(detail::output_path(c, "calibration.json"), calib.dump(2) + "\n");
  detail::log_invocation(c, "run");

  summary << "protocol " << to_string(o.run.manifest.protocol) << ": train=" << o.run.train.size()
          << " cal=" << o.run.cal.size() << " test=" << o.run.test.size() << '\n';
  summary << "temperature " << format_double(r.temperature.temperature) << (r.temperature.clamped ? " (clamped)" : "")
          << ", threshold "
          << (r.rule.retain_all() ? std::string("RETAIN_ALL") : format_double(*r.rule.threshold)) << " at epsilon "
          << format_double(c.epsilon) << '\n';
  if (r.rule.warning())
    summary << "warning: quantile index exceeds calibration size; every test point is retained\n";
  auto show = [](const std::optional<double>& v) {
    std::ostringstream s;
    if (v)
      s << std::fixed << std::setprecision(3) << *v;
    else
      s << "  -  ";
    return s.str();
  };
  summary << "method       coverage  AUROC  AUPRC  ECE    Brier  NLL    error\n";
  for (const auto& m : o.report.rows)
    summary << std::left << std::setw(12) << m.method << ' ' << show(m.coverage) << "     " << show(m.auroc) << ' '
            << show(m.auprc) << ' ' << show(m.ece) << ' ' << show(m.brier) << ' ' << show(m.nll) << ' '
            << show(m.error_rate) << '\n';
  if (!o.report.auroc_invariant) summary << "warning: AUROC changed under temperature scaling\n";
  return o;
}

inline CoverageRiskCurve cmd_sweep(const RunConfig& c, std::ostream& summary) {
  const PipelineRun p = run_pipeline(c);
  auto curve = coverage_risk_sweep(calibrated_predictions(p.result), label_map(p.result.test_records),
                                   c.coverage_grid, "test");
  std::ostringstream csv;
  for (const auto& line : provenance_lines(p)) csv << "# " << line << '\n';
  curve.write_csv(csv);
  detail::write_file(detail::output_path(c, "coverage_risk.csv"), csv.str());
  detail::log_invocation(c, "sweep");
  summary << "coverage  error_rate\n";
  for (const auto& pt : curve.points)
    summary << std::fixed << std::setprecision(3) << pt.coverage << "     "
            << (pt.risk ? format_double(*pt.risk) : std::string("-")) << '\n';
  return curve;
}

inline std::vector<SizeSweepRow> cmd_simulate(const RunConfig& c, std::ostream& summary) {
  SyntheticSpec spec;
  spec.n_test = c.simulate.n_test;
  spec.miscalibration_temperature = c.simulate.miscalibration_temperature;
  spec.base_positive_rate = c.simulate.base_positive_rate;
  spec.seed = c.simulate.seed;
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw UsageError(std::string("simulate: ") + e.what());
  }
  const auto rows = calibration_size_sweep(spec, c.simulate.n_cal_sizes, c.simulate.epsilon, c.simulate.trials);
  std::ostringstream csv;
  csv << "# simulate config=" << c.to_json()["simulate"].dump() << '\n';
  write_size_sweep_csv(csv, rows);
  detail::write_file(detail::output_path(c, "simulation.csv"), csv.str());
  detail::log_invocation(c, "simulate");
  summary << "n_cal  ece_after  coverage\n";
  for (const auto& r : rows)
    summary << r.n_cal << "  " << std::fixed << std::setprecision(4) << r.mean_ece_after << "  " << r.mean_coverage
            << '\n';
  return rows;
}

// Trains the builtin scorer on the train part and exports logits for every
// example of the prepared dataset.
inline std::vector<ScoreRecord> cmd_score(const RunConfig& c, std::ostream& summary) {
  const Dataset data = load_prepared_dataset(c);
  const SplitManifest m = load_or_make_manifest(c, data);
  const auto model = train_linear(data.subset(m.train_ids), c.scorer.kmer_size, c.scorer.hyper);
  const auto records = score(model, data);
  std::ostringstream out;
  out << "# manifest_fingerprint=" << m.fingerprint() << '\n' << "# scorer_fingerprint=" << model.fingerprint() << '\n';
  write_logits(out, records);
  detail::write_file(detail::output_path(c, "logits.tsv"), out.str());
  detail::write_file(detail::output_path(c, "model.json"), model.dump());
  detail::log_invocation(c, "score");
  summary << "scored " << records.size() << " examples; final training loss " << format_double(model.final_loss())
          << '\n';
  return records;
}

// Re-evaluates a saved decision TSV against the dataset labels.
inline std::string cmd_metrics(const RunConfig& c, std::ostream& summary) {
  if (c.decisions_path.empty()) throw UsageError("metrics.decisions: required");
  std::ifstream in(c.decisions_path, std::ios::binary);
  if (!in) throw Error("decision file not found: '" + c.decisions_path + "'");
  std::string provenance;
  {
    std::string first;
    std::getline(in, first);
    while (!first.empty() && first.front() == '#') {
      provenance += first.substr(first.find_first_not_of("# ")) + ";";
      if (!std::getline(in, first)) break;
    }
    in.clear();
    in.seekg(0);
  }
  const auto decisions = parse_decisions(in);
  const Dataset data = load_prepared_dataset(c);
  std::unordered_map<std::string, int> labels;
  for (const auto& e : data) labels.emplace(e.id, e.label);

  const auto sel = selective_error(decisions, labels);
  std::vector<double> all, kept;
  std::vector<int> all_y, kept_y;
  std::vector<CalibratedPrediction> preds;
  for (const auto& d : decisions) {
    const int y = labels.at(d.example_id);
    all.push_back(d.prob_calibrated);
    all_y.push_back(y);
    preds.push_back({d.example_id, d.prob_calibrated});
    if (d.retained()) {
      kept.push_back(d.prob_calibrated);
      kept_y.push_back(y);
    }
  }
  nlohmann::ordered_json j;
  j["config"] = c.to_json();
  j["decisions_provenance"] = provenance;
  j["coverage"] = sel.coverage;
  j["error_rate"] = sel.risk ? nlohmann::ordered_json(*sel.risk) : nlohmann::ordered_json();
  j["all"] = score_set("calibrated", all, all_y, 1.0).to_json();
  j["retained"] = score_set("retained", kept, kept_y, sel.coverage).to_json();
  j["coverage_risk"] = curve_json(coverage_risk_sweep(preds, labels, c.coverage_grid, c.decisions_path));
  const std::string text = j.dump(2) + "\n";
  detail::write_file(detail::output_path(c, "decision_metrics.json"), text);
  detail::log_invocation(c, "metrics");
  summary << "coverage " << format_double(sel.coverage) << ", error rate "
          << (sel.risk ? format_double(*sel.risk) : std::string("-")) << '\n';
  return text;
}

}  // namespace cap
