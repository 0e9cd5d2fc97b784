#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "fogsim/config.hpp"
#include "fogsim/report.hpp"

using namespace fogsim;
namespace fs = std::filesystem;

namespace {

const char* kSmallIni = R"(
[experiment]
seeds = 7
scenarios = vm-fixed, dispatcher
batches = 2

[clustering]
l = 2
M = 200
M_prime = 100

[matching]
lambda = 1.5
)";

std::string error_of(const std::string& text, const std::string& name = "cfg.ini") {
  try {
    parse_experiment(text, name);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fogsim_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FOGSIM_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

ScenarioReport sample_report(ScenarioKind kind) {
  ScenarioReport r;
  r.kind = kind;
  r.seed = 3;
  r.lambda_used = 1.5;
  r.ru_percent = 40.25;
  r.td_percent = 12.5;
  r.workloads = 8;
  r.dropped = 1;
  r.instances = 2;
  if (kind != ScenarioKind::kVmFixed) {
    r.iterations_used = 4;
    r.centroid_deviation = 0.05;
  }
  if (kind == ScenarioKind::kAttacked || kind == ScenarioKind::kHardened) {
    r.attack = AttackStats{0.5, 0.25, 100, 2};
  }
  if (kind == ScenarioKind::kHardened) r.defense = DefenseStats{0.4, 0.9, 20, 1.0, false};
  return r;
}

}  // namespace

TEST(Ini, ParsesSectionsCommentsAndLines) {
  const auto doc = IniDocument::parse("# top\n[a]\nx = 1   # trailing\n\n[b]\ny = hello, world\n", "t");
  EXPECT_EQ(doc.get_int("a", "x"), 1);
  EXPECT_EQ(doc.line_of("a", "x"), 3);
  const auto list = doc.get_list("b", "y");
  ASSERT_TRUE(list);
  EXPECT_EQ((*list)[1], "world");
  EXPECT_FALSE(doc.get_string("a", "missing"));
}

TEST(Ini, MalformedInputNamesTheLine) {
  EXPECT_NE(error_of("[experiment]\nseeds 1\n").find("cfg.ini:2:"), std::string::npos);
  EXPECT_NE(error_of("x = 1\n").find("cfg.ini:1:"), std::string::npos);
  EXPECT_NE(error_of("[a\n").find("cfg.ini:1:"), std::string::npos);
  EXPECT_NE(error_of("[clustering]\nl = 3\nl = 4\n").find("cfg.ini:3:"), std::string::npos);
}

TEST(Ini, UnknownKeyRejected) {
  const auto msg = error_of("[clustering]\nl = 3\nbogus = 1\n");
  EXPECT_NE(msg.find("cfg.ini:3:"), std::string::npos);
  EXPECT_NE(msg.find("bogus"), std::string::npos);
  EXPECT_FALSE(error_of("[nosuch]\nk = 1\n").empty());
}

TEST(Ini, TypeAndRangeErrorsNameTheLine) {
  EXPECT_NE(error_of("[clustering]\n\nl = three\n").find("cfg.ini:3:"), std::string::npos);
  EXPECT_NE(error_of("[matching]\nlambda = 4\n").find("cfg.ini:2:"), std::string::npos);
  EXPECT_NE(error_of("[clustering]\nzeta1 = 1.5\n").find("cfg.ini:2:"), std::string::npos);
  EXPECT_NE(error_of("[clustering]\nl = 3\nM = 100\n").find("cfg.ini:3:"), std::string::npos);
  EXPECT_NE(error_of("[features]\ncpu = 5, 1\n").find("cfg.ini:2:"), std::string::npos);
  EXPECT_NE(error_of("[hardening]\niota = 0.1\n").find("cfg.ini:2:"), std::string::npos);
  EXPECT_NE(error_of("[experiment]\nscenarios = dispatcher, nope\n").find("cfg.ini:2:"), std::string::npos);
  EXPECT_NE(error_of("[hardening]\ncost_sensitive = maybe\n").find("cfg.ini:2:"), std::string::npos);
}

TEST(Ini, ValuesReachTheConfig) {
  const auto x = parse_experiment(kSmallIni, "small");
  EXPECT_EQ(x.seeds, std::vector<std::uint64_t>{7});
  ASSERT_EQ(x.kinds.size(), 2u);
  EXPECT_EQ(x.kinds[1], ScenarioKind::kDispatcher);
  EXPECT_EQ(x.scenario.online.level_count, 2);
  EXPECT_EQ(x.scenario.offline_count, 200u);
  EXPECT_EQ(x.scenario.batch_size, 100u);
  EXPECT_DOUBLE_EQ(x.scenario.lambda, 1.5);
  EXPECT_FALSE(x.scenario.catalog.entries.empty());
}

TEST(Ini, HashTracksContent) {
  EXPECT_EQ(parse_experiment(kSmallIni).content_hash, parse_experiment(kSmallIni).content_hash);
  EXPECT_NE(parse_experiment(kSmallIni).content_hash,
            parse_experiment(std::string(kSmallIni) + "\n[attack]\nQ_ij = 5\n").content_hash);
}

TEST(Ini, ShippedDefaultLoads) {
  const auto x = load_experiment(fs::path(FOGSIM_SOURCE_DIR) / "config" / "default.ini");
  EXPECT_EQ(x.scenario.online.level_count, 3);
  EXPECT_EQ(x.scenario.offline_count, 1000u);
  EXPECT_EQ(x.scenario.batch_size, 500u);
  EXPECT_DOUBLE_EQ(x.scenario.online.zeta1, 0.9);
  EXPECT_DOUBLE_EQ(x.scenario.online.zeta2, 0.1);
  EXPECT_DOUBLE_EQ(x.scenario.attack.eps_ev, 0.04);
  EXPECT_EQ(x.scenario.attack.queries_per_boundary, 10);
  EXPECT_EQ(x.kinds.size(), 4u);
  EXPECT_FALSE(x.catalog_path.empty());
  EXPECT_NO_THROW(x.validate());
}

TEST(Csv, EscapeFollowsRfc4180) {
  EXPECT_EQ(csv::escape("plain"), "plain");
  EXPECT_EQ(csv::escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv::escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv::escape("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(csv::escape(""), "");
  EXPECT_EQ(csv::join_row({"x", "y,z", ""}), "x,\"y,z\",\r\n");
}

TEST(Csv, AbsentStatisticsStayEmpty) {
  const std::vector<ScenarioReport> reports = {sample_report(ScenarioKind::kVmFixed),
                                               sample_report(ScenarioKind::kHardened)};
  const auto rows = lines_of(reports_csv(reports));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rfind("kind,seed,lambda,ru_percent,td_percent", 0), 0u);
  EXPECT_EQ(rows[1], "vm-fixed,3,1.5,40.25,12.5,8,1,2,,,,,,,\r");
  EXPECT_NE(rows[2].find("hardened,3,1.5,40.25,12.5,8,1,2,4,0.05,0.5,0.25,100,0.4,0.9"), std::string::npos);
}

TEST(Csv, PlotDataGroupsComparisons) {
  std::vector<ScenarioReport> reports;
  for (auto k : kAllScenarioKinds) reports.push_back(sample_report(k));
  const auto files = emit_plot_data(reports);
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(lines_of(files.at("plot_scenarios.csv")).size(), 5u);
  const auto legit = lines_of(files.at("plot_legitimate.csv"));
  ASSERT_EQ(legit.size(), 3u);
  EXPECT_EQ(legit[1].rfind("vm-fixed,", 0), 0u);
  EXPECT_EQ(legit[2].rfind("dispatcher,", 0), 0u);
  const auto sec = lines_of(files.at("plot_attack_defense.csv"));
  ASSERT_EQ(sec.size(), 4u);
  EXPECT_EQ(sec[3].rfind("hardened,", 0), 0u);
  EXPECT_THROW(emit_plot_data(std::span<const ScenarioReport>{}), std::invalid_argument);
}

TEST(Csv, SweepRowsCarryValueAndError) {
  std::vector<SweepPoint> pts(2);
  pts[0].parameter = pts[1].parameter = "lambda";
  pts[0].value = 1.0;
  pts[0].run = ScenarioRun{sample_report(ScenarioKind::kDispatcher), {}};
  pts[1].value = 3.5;
  pts[1].error = "lambda must lie in [1, 3]";
  const auto rows = lines_of(sweep_csv(pts));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rfind("lambda,kind,", 0), 0u);
  EXPECT_EQ(rows[1].rfind("1,dispatcher,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("3.5,", 0), 0u);
  EXPECT_NE(rows[2].find("\"lambda must lie in [1, 3]\""), std::string::npos);
  const auto cells = std::count(rows[0].begin(), rows[0].end(), ',');
  EXPECT_EQ(std::count(rows[1].begin(), rows[1].end(), ','), cells);
}

TEST(Manifest, SerializesFields) {
  Manifest m;
  m.config_hash = 0xabc;
  m.seeds = {1, 2};
  m.scenarios = {"dispatcher"};
  m.files = {"reports.csv"};
  const nlohmann::json j = m;
  EXPECT_EQ(j["config_hash"], "0000000000000abc");
  EXPECT_EQ(j["version"], kVersion);
  EXPECT_EQ(j["seeds"].size(), 2u);
  EXPECT_TRUE(j["failures"].empty());
}

TEST(Cli, ValidateConfig) {
  EXPECT_EQ(run_cli("--validate-config --config \"" + std::string(FOGSIM_SOURCE_DIR) + "/config/default.ini\""), 0);
  const auto dir = scratch_dir("bad");
  write_file(dir / "bad.ini", "[clustering]\nbogus = 1\n");
  EXPECT_EQ(run_cli("--validate-config --config \"" + (dir / "bad.ini").string() + "\""), 2);
  EXPECT_EQ(run_cli("--config \"" + (dir / "missing.ini").string() + "\""), 2);
  EXPECT_EQ(run_cli("--scenario nope --config \"" + std::string(FOGSIM_SOURCE_DIR) + "/config/default.ini\""), 2);
}

TEST(Cli, RepeatedRunsWriteIdenticalReports) {
  const auto dir = scratch_dir("repeat");
  write_file(dir / "small.ini", kSmallIni);
  const std::string base = "--config \"" + (dir / "small.ini").string() + "\" --scenario dispatcher --seed 7 --out ";
  ASSERT_EQ(run_cli(base + "\"" + (dir / "a").string() + "\""), 0);
  ASSERT_EQ(run_cli(base + "\"" + (dir / "b").string() + "\""), 0);
  for (const char* f : {"report_dispatcher_seed7.json", "reports.csv", "manifest.json"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir / "a" / "timing.json"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(manifest["seeds"][0], 7);
  EXPECT_EQ(manifest["overrides"]["seed"][0], 7);
}

TEST(Cli, SweepWritesOneRowPerValue) {
  const auto dir = scratch_dir("sweep");
  write_file(dir / "small.ini", kSmallIni);
  ASSERT_EQ(run_cli("--config \"" + (dir / "small.ini").string() +
                    "\" --scenario dispatcher --sweep lambda=1:2:0.5 --timing --out \"" + (dir / "o").string() +
                    "\""),
            0);
  const auto rows = lines_of(slurp(dir / "o" / "sweep_lambda_dispatcher_seed7.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].rfind("1,", 0), 0u);
  EXPECT_EQ(rows[3].rfind("2,", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "o" / "timing.json"));
  EXPECT_EQ(run_cli("--config \"" + (dir / "small.ini").string() + "\" --sweep lambda=1:x:0.5 --out \"" +
                    (dir / "p").string() + "\""),
            2);
}
