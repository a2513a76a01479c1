#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "faasmeter/cli.hpp"

using namespace faasmeter;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = FAASMETER_SCENARIO_DIR;

struct Ran {
  int code;
  std::string out, err;
};

Ran run(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int c = cli::run(args, o, e);
  return {c, o.str(), e.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("faasmeter_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> v;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) v.push_back(cell);
  return v;
}

}  // namespace

TEST(Cli, HelpListsUnitsAndExitsZero) {
  auto r = run({"profile", "--help"});
  EXPECT_EQ(r.code, cli::kOk);
  EXPECT_NE(r.out.find("seconds"), std::string::npos);
  EXPECT_NE(r.out.find("watts"), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"simulate"}).code, cli::kUsage);  // --scenario required
  EXPECT_EQ(run({"profile", "--mode", "sideways"}).code, cli::kUsage);
}

TEST(Cli, SimulateWritesTracesAndManifest) {
  auto d = scratch("sim");
  auto r = run({"simulate", "--scenario", (kScenarios / "four_fn.json").string(), "--out", d.string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  for (auto f : {"invocations.csv", "power.csv", "utilization.csv", "counters.csv", "truth.json", "calibration.json",
                 "manifest.json", "power.meta.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const auto files = manifest::read(d);
  EXPECT_TRUE(files.count("power.csv"));
  EXPECT_EQ(files.at("power.csv"), manifest::sha256_file(d / "power.csv"));
}

TEST(Cli, InvalidScenarioNamesTheKey) {
  auto d = scratch("bad");
  std::ofstream(d / "bad.json") << R"({"id":"x","seed":1,"duration_s":60,
    "functions":[{"id":"a","mean_latency_s":1,"watts":5,"iat":{"kind":"exponential","men_s":2}}],
    "truth":{"idle_watts":10}})";
  auto r = run({"simulate", "--scenario", (d / "bad.json").string(), "--out", (d / "o").string()});
  EXPECT_EQ(r.code, cli::kValidation);
  EXPECT_NE(r.err.find("men_s"), std::string::npos) << r.err;
}

TEST(Cli, CombinedWithoutCpuTraceNamesTheInput) {
  auto d = scratch("jetson");
  const auto sc = (kScenarios / "jetson.json").string();
  ASSERT_EQ(run({"simulate", "--scenario", sc, "--out", (d / "sim").string()}).code, cli::kOk);
  auto bad = run({"profile", "--traces", (d / "sim").string(), "--out", (d / "p").string(), "--mode", "combined"});
  EXPECT_EQ(bad.code, cli::kValidation);
  EXPECT_NE(bad.err.find("cpu"), std::string::npos) << bad.err;
  auto ok = run({"profile", "--traces", (d / "sim").string(), "--out", (d / "p").string(), "--mode", "no-idle"});
  EXPECT_EQ(ok.code, cli::kOk) << ok.err;
  EXPECT_TRUE(fs::exists(d / "p" / "footprints.json"));
}

TEST(Cli, StackedColumnsSumToPrediction) {
  auto d = scratch("stacked");
  const auto sc = (kScenarios / "four_fn.json").string();
  ASSERT_EQ(run({"simulate", "--scenario", sc, "--out", (d / "sim").string()}).code, cli::kOk);
  ASSERT_EQ(run({"profile", "--traces", (d / "sim").string(), "--out", (d / "p").string(), "--mode", "no-idle",
                 "--online"})
                .code,
            cli::kOk);
  auto r = run({"report", "--in", (d / "p").string(), "--out", (d / "r").string(), "--spectrum"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  ASSERT_TRUE(fs::exists(d / "r" / "spectrum.csv"));
  std::ifstream in(d / "r" / "stacked.csv");
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  const auto header = split(line);
  ASSERT_GE(header.size(), 5u);
  EXPECT_EQ(header[0], "t0");
  EXPECT_EQ(header[2], "idle");
  EXPECT_EQ(header[header.size() - 2], "predicted_total");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto cells = split(line);
    ASSERT_EQ(cells.size(), header.size());
    double sum = 0.0;
    for (std::size_t i = 2; i + 2 < cells.size(); ++i) sum += std::stod(cells[i]);
    const double predicted = std::stod(cells[cells.size() - 2]);
    EXPECT_NEAR(sum, predicted, 1e-6 * std::max(1.0, predicted));
    ++rows;
  }
  EXPECT_GT(rows, 5u);
}

TEST(Cli, ReportWithoutInputsIsAnIoError) {
  auto d = scratch("empty");
  auto r = run({"report", "--in", d.string(), "--out", (d / "r").string()});
  EXPECT_EQ(r.code, cli::kIo);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, SyncRecoversInjectedOffset) {
  auto d = scratch("sync");
  ASSERT_EQ(run({"simulate", "--scenario", (kScenarios / "skew.json").string(), "--out", d.string()}).code, cli::kOk);
  const auto p = (d / "power.csv").string();
  auto r = run({"signal", "sync", "--power", p, "--reference", p, "--reference-source", "cpu"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j.at("offset_s").get<double>(), 3.0, 1.0);
}

TEST(Cli, CapWritesDecisions) {
  auto d = scratch("cap");
  auto r = run({"cap", "--scenario", (kScenarios / "four_fn.json").string(), "--cap-watts", "90", "--out", d.string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  for (auto f : {"decisions.jsonl", "cap_summary.json", "capped_power.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
}
