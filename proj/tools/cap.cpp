// cap: calibrated selective prediction for sequence-pair classifiers.
//
//   cap split    --config run.json            write manifest.json
//   cap run      --dataset pairs.tsv           decisions.tsv, metrics.json, model.json, calibration.json
//   cap sweep    --dataset pairs.tsv           coverage_risk.csv
//   cap simulate                               simulation.csv
//   cap score    --dataset pairs.tsv           logits.tsv
//   cap metrics  --dataset pairs.tsv --decisions out/decisions.tsv
//
// Flags override config-file values. CAP_NUM_THREADS sets the worker count.

#include <cap/commands.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Flags {
  std::string config_path;
  std::string dataset;
  std::string out;
  std::string protocol;
  std::string scorer;
  std::string logits;
  std::string manifest;
  std::string decisions;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::optional<std::size_t> k_test_epitopes;
  std::optional<double> identity_ceiling;
  std::optional<double> cal_fraction;
  std::optional<std::size_t> trials;
  bool mask_cdr3a = false;
  bool no_dedup = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config_path, "JSON config file");
  cmd->add_option("-d,--dataset", f.dataset, "pair TSV (dataset.path)");
  cmd->add_option("-o,--out", f.out, "output directory (output_dir)");
  cmd->add_option("--protocol", f.protocol, "random | epitope_held_out | distance_aware");
  cmd->add_option("--seed", f.seed, "split seed (split.seed)");
  cmd->add_option("--epsilon", f.epsilon, "target error level (conformal.epsilon)");
  cmd->add_option("--k-test-epitopes", f.k_test_epitopes, "held-out epitope count");
  cmd->add_option("--identity-ceiling", f.identity_ceiling, "distance-aware identity ceiling");
  cmd->add_option("--cal-fraction", f.cal_fraction, "calibration fraction of held-in pairs");
  cmd->add_option("--scorer", f.scorer, "builtin | external");
  cmd->add_option("--logits", f.logits, "external logit TSV (implies --scorer external)");
  cmd->add_option("--manifest", f.manifest, "use an existing split manifest");
  cmd->add_flag("--mask-cdr3a", f.mask_cdr3a, "train the builtin scorer without CDR3a");
  cmd->add_flag("--no-dedup", f.no_dedup, "skip identity deduplication");
  cmd->add_option("--set", f.sets, "override any config field: key.path=value")->take_all();
}

nlohmann::json user_config(const Flags& f) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config_path.empty()) {
    j = cap::read_json_file(f.config_path);
    if (!j.is_object()) throw cap::UsageError(f.config_path + ": config must be a JSON object");
  }
  auto set = [&](const std::string& key, const nlohmann::json& v) { cap::apply_override(j, key + "=" + v.dump()); };
  if (!f.dataset.empty()) set("dataset.path", f.dataset);
  if (!f.out.empty()) set("output_dir", f.out);
  if (!f.protocol.empty()) set("split.protocol", f.protocol);
  if (f.seed) set("split.seed", *f.seed);
  if (f.epsilon) set("conformal.epsilon", *f.epsilon);
  if (f.k_test_epitopes) set("split.k_test_epitopes", *f.k_test_epitopes);
  if (f.identity_ceiling) set("split.identity_ceiling", *f.identity_ceiling);
  if (f.cal_fraction) set("split.cal_fraction", *f.cal_fraction);
  if (!f.logits.empty()) {
    set("scorer.logits_path", f.logits);
    set("scorer.kind", "external");
  }
  if (!f.scorer.empty()) set("scorer.kind", f.scorer);
  if (!f.manifest.empty()) set("split.manifest", f.manifest);
  if (!f.decisions.empty()) set("metrics.decisions", f.decisions);
  if (f.trials) set("simulate.trials", *f.trials);
  if (f.mask_cdr3a) set("scorer.mask_cdr3a", true);
  if (f.no_dedup) set("preprocess.dedup_identity", nullptr);
  for (const auto& s : f.sets) cap::apply_override(j, s);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrated selective prediction for sequence-pair classifiers"};
  app.require_subcommand(1);
  Flags f;
  auto* split = app.add_subcommand("split", "build a train/calibration/test manifest");
  auto* run = app.add_subcommand("run", "full pipeline: score, calibrate, abstain, evaluate");
  auto* sweep = app.add_subcommand("sweep", "coverage-risk curve over a coverage grid");
  auto* simulate = app.add_subcommand("simulate", "synthetic coverage / calibration-size experiment");
  auto* score = app.add_subcommand("score", "train the builtin scorer and export logits");
  auto* metrics = app.add_subcommand("metrics", "re-evaluate a saved decision TSV");
  for (auto* cmd : {split, run, sweep, simulate, score, metrics}) add_common(cmd, f);
  simulate->add_option("--trials", f.trials, "trials per calibration size");
  metrics->add_option("--decisions", f.decisions, "decision TSV from `cap run`");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const cap::RunConfig config = cap::parse_config(user_config(f));
    if (split->parsed()) cap::cmd_split(config, std::cout);
    if (run->parsed()) cap::cmd_run(config, std::cout);
    if (sweep->parsed()) cap::cmd_sweep(config, std::cout);
    if (simulate->parsed()) cap::cmd_simulate(config, std::cout);
    if (score->parsed()) cap::cmd_score(config, std::cout);
    if (metrics->parsed()) cap::cmd_metrics(config, std::cout);
  } catch (const cap::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
