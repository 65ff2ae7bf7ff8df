#include <cap/commands.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cap;
namespace fs = std::filesystem;

namespace {

const std::string kToy = std::string(CAP_SOURCE_DIR) + "/data/toy_pairs.tsv";

struct Outcome {
  int exit_code = 0;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cli(const std::string& args) {
  const fs::path dir = fs::path(CAP_TEST_TMP) / "cli_io";
  fs::create_directories(dir);
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(CAP_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

std::string fresh_dir(const std::string& name) {
  const auto d = fs::path(CAP_TEST_TMP) / name;
  fs::remove_all(d);
  return d.string();
}

std::string usage_message(const nlohmann::json& user) {
  try {
    parse_config(user);
  } catch (const UsageError& e) {
    return e.what();
  }
  return {};
}

std::size_t data_rows(const std::string& csv) {
  std::size_t n = 0;
  std::istringstream in(csv);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    ++n;
  }
  return n;
}

}  // namespace

TEST(Config, DefaultsParse) {
  const auto c = parse_config(nlohmann::json::object());
  EXPECT_EQ(c.epsilon, 0.2);
  EXPECT_EQ(c.protocol, SplitProtocol::Random);
  EXPECT_EQ(c.split.k_test_epitopes, 15u);
  EXPECT_EQ(*c.dedup_identity, 0.9);
  EXPECT_EQ(c.coverage_grid.size(), 5u);
}

TEST(Config, ErrorsNameTheFieldPath) {
  EXPECT_EQ(usage_message({{"split", {{"bogus", 1}}}}).rfind("split.bogus", 0), 0u);
  EXPECT_EQ(usage_message({{"conformal", {{"epsilon", "high"}}}}).rfind("conformal.epsilon", 0), 0u);
  EXPECT_EQ(usage_message({{"conformal", {{"epsilon", 1.5}}}}).rfind("conformal.epsilon", 0), 0u);
  EXPECT_EQ(usage_message({{"split", {{"k_test_epitopes", -3}}}}).rfind("split.k_test_epitopes", 0), 0u);
  EXPECT_EQ(usage_message({{"split", {{"protocol", "kfold"}}}}).rfind("split.protocol", 0), 0u);
  EXPECT_EQ(usage_message({{"scorer", {{"kind", "external"}}}}).rfind("scorer.logits_path", 0), 0u);
  EXPECT_EQ(usage_message({{"sweep", {{"grid", {1.0, 0.0}}}}}).rfind("sweep.grid", 0), 0u);
}

TEST(Config, NullableAndOverrides) {
  nlohmann::json user = nlohmann::json::object();
  apply_override(user, "preprocess.dedup_identity=null");
  apply_override(user, "split.protocol=epitope_held_out");
  apply_override(user, "split.k_test_epitopes=4");
  apply_override(user, "preprocess.negatives_target_rate=0.1");
  const auto c = parse_config(user);
  EXPECT_FALSE(c.dedup_identity);
  EXPECT_EQ(c.protocol, SplitProtocol::EpitopeHeldOut);
  EXPECT_EQ(c.split.k_test_epitopes, 4u);
  EXPECT_EQ(*c.negatives_target_rate, 0.1);
  EXPECT_THROW(apply_override(user, "novalue"), UsageError);
}

TEST(Cli, NoSubcommandIsAnError) { EXPECT_NE(cli("").exit_code, 0); }

TEST(Cli, UnknownConfigFieldExitsWithUsageError) {
  const auto o = cli("run -d " + kToy + " --set split.nope=1");
  EXPECT_EQ(o.exit_code, 2);
  EXPECT_NE(o.err.find("split.nope"), std::string::npos);
}

TEST(Cli, MissingDatasetIsReported) {
  const auto o = cli("run -d /nonexistent/pairs.tsv -o " + fresh_dir("cli_missing"));
  EXPECT_EQ(o.exit_code, 1);
  EXPECT_NE(o.err.find("/nonexistent/pairs.tsv"), std::string::npos);
}

TEST(Cli, TooManyHeldOutEpitopes) {
  const auto o = cli("run -d " + kToy + " --protocol epitope_held_out --k-test-epitopes 10 -o " + fresh_dir("cli_k"));
  EXPECT_NE(o.exit_code, 0);
  EXPECT_NE(o.err.find("k_test_epitopes"), std::string::npos);
  EXPECT_NE(o.err.find("10"), std::string::npos);
}

TEST(Cli, RunWritesThreeMethodRows) {
  const auto dir = fresh_dir("cli_run");
  const auto o = cli("run -d " + kToy + " -o " + dir);
  ASSERT_EQ(o.exit_code, 0) << o.err;
  for (const char* f : {"metrics.json", "decisions.tsv", "manifest.json", "model.json", "calibration.json", "run.log"})
    EXPECT_TRUE(fs::exists(fs::path(dir) / f)) << f;
  const auto j = nlohmann::json::parse(slurp(fs::path(dir) / "metrics.json"));
  ASSERT_EQ(j["methods"].size(), 3u);
  EXPECT_EQ(j["methods"][0]["method"], "Baseline");
  EXPECT_EQ(j["methods"][2]["method"], "CAP");
  EXPECT_TRUE(j["auroc_invariant_under_temperature"].get<bool>());
  EXPECT_EQ(j["config"]["conformal"]["epsilon"], 0.2);
  EXPECT_NE(o.out.find("+TempScale"), std::string::npos);
  const auto decisions = slurp(fs::path(dir) / "decisions.tsv");
  EXPECT_EQ(decisions.rfind("# manifest_fingerprint=", 0), 0u);

  // Re-scoring the saved decisions agrees with the run.
  const auto m = cli("metrics -d " + kToy + " -o " + dir + " --decisions " + dir + "/decisions.tsv");
  ASSERT_EQ(m.exit_code, 0) << m.err;
  const auto dm = nlohmann::json::parse(slurp(fs::path(dir) / "decision_metrics.json"));
  EXPECT_DOUBLE_EQ(dm["coverage"].get<double>(), j["methods"][2]["coverage"].get<double>());
}

TEST(Cli, SweepWritesFiveRows) {
  const auto dir = fresh_dir("cli_sweep");
  const auto o = cli("sweep -d " + kToy + " -o " + dir);
  ASSERT_EQ(o.exit_code, 0) << o.err;
  const auto csv = slurp(fs::path(dir) / "coverage_risk.csv");
  EXPECT_EQ(data_rows(csv), 5u);
  EXPECT_NE(csv.find("coverage,error_rate,ece,auprc,abstained"), std::string::npos);
}

TEST(Cli, SplitThenRunWithManifest) {
  const auto dir = fresh_dir("cli_manifest");
  ASSERT_EQ(cli("split -d " + kToy + " --seed 5 -o " + dir).exit_code, 0);
  const auto manifest = slurp(fs::path(dir) / "manifest.json");
  const auto o = cli("run -d " + kToy + " --manifest " + dir + "/manifest.json -o " + dir);
  ASSERT_EQ(o.exit_code, 0) << o.err;
  EXPECT_EQ(slurp(fs::path(dir) / "manifest.json"), manifest);
}

TEST(Cli, ScoreThenExternalLogits) {
  const auto dir = fresh_dir("cli_score");
  ASSERT_EQ(cli("score -d " + kToy + " -o " + dir).exit_code, 0);
  const auto o = cli("run -d " + kToy + " --logits " + dir + "/logits.tsv -o " + dir + "/ext");
  ASSERT_EQ(o.exit_code, 0) << o.err;
  const auto j = nlohmann::json::parse(slurp(fs::path(dir) / "ext" / "metrics.json"));
  EXPECT_EQ(j["config"]["scorer"]["kind"], "external");
}

TEST(Cli, SimulateWritesOneRowPerSize) {
  const auto dir = fresh_dir("cli_sim");
  const auto o = cli("simulate --trials 3 --set simulate.n_cal_sizes=[100,400] --set simulate.n_test=300 -o " + dir);
  ASSERT_EQ(o.exit_code, 0) << o.err;
  EXPECT_EQ(data_rows(slurp(fs::path(dir) / "simulation.csv")), 2u);
}

TEST(Cli, DistanceAwareProtocolRuns) {
  const auto dir = fresh_dir("cli_da");
  const auto o = cli("run -d " + kToy + " --protocol distance_aware --identity-ceiling 0.7 -o " + dir);
  ASSERT_EQ(o.exit_code, 0) << o.err;
}
