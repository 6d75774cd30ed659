#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::string kBinary = CVQ_BINARY;
const std::string kPrograms = CVQ_PROGRAMS;

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("cvq_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Runs cvq with `args`; returns the exit status.
int cvq(const std::string& args, const std::string& env = {}) {
  const std::string cmd = (env.empty() ? "" : env + " ") + kBinary + " " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, RunIsByteIdenticalAcrossRunsAndThreadCounts) {
  Scratch s;
  const std::string epr = kPrograms + "/epr.cvq";
  ASSERT_EQ(cvq("run " + epr + " --seed 7 --out " + s.path("r1.json")), 0);
  ASSERT_EQ(cvq("run " + epr + " --seed 7 --out " + s.path("r2.json")), 0);
  EXPECT_EQ(slurp(s.path("r1.json")), slurp(s.path("r2.json")));
  EXPECT_FALSE(slurp(s.path("r1.json")).empty());

  const std::string tele = kPrograms + "/teleport.cvq";
  ASSERT_EQ(cvq("run " + tele + " --seed 9 --shots 16 --threads 1 --out " + s.path("t1.json")), 0);
  ASSERT_EQ(cvq("run " + tele + " --seed 9 --shots 16 --threads 4 --out " + s.path("t4.json")), 0);
  EXPECT_EQ(slurp(s.path("t1.json")), slurp(s.path("t4.json")));
  const json doc = json::parse(slurp(s.path("t1.json")));
  ASSERT_EQ(doc["results"].size(), 16u);
  EXPECT_NE(doc["results"][0]["outcomes"][0]["value"], doc["results"][1]["outcomes"][0]["value"]);

  ASSERT_EQ(cvq("run " + tele + " --seed 10 --shots 16 --out " + s.path("t10.json")), 0);
  EXPECT_NE(slurp(s.path("t1.json")), slurp(s.path("t10.json")));
}

TEST(Cli, RunReportsEprForms) {
  Scratch s;
  ASSERT_EQ(cvq("run " + kPrograms + "/epr.cvq --out " + s.path("r.json")), 0);  // seed from the program
  const json doc = json::parse(slurp(s.path("r.json")));
  EXPECT_EQ(doc["seed"], 7);
  const auto& reports = doc["results"][0]["reports"];
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_EQ(reports[0]["cov"].size(), 16u);
  EXPECT_NEAR(reports[1]["ratio"].get<double>(), std::pow(10.0, -1.5), 1e-12);
  EXPECT_NEAR(reports[2]["ratio"].get<double>(), std::pow(10.0, -1.5), 1e-12);
}

TEST(Cli, ExamplePrograms) {
  Scratch s;
  for (const char* name : {"epr", "teleport", "cubic", "stream_1d", "loop_bs"}) {
    EXPECT_EQ(cvq("run " + kPrograms + "/" + name + ".cvq --out " + s.path(std::string(name) + ".json")), 0) << name;
  }
  const json stream = json::parse(slurp(s.path("stream_1d.json")));
  for (const auto& f : stream["results"][0]["stream"]["forms"]) EXPECT_NEAR(f["max_ratio"].get<double>(), std::pow(10.0, -1.5), 1e-9);
}

TEST(Cli, BudgetMatchesFiberArithmetic) {
  Scratch s;
  ASSERT_EQ(cvq("budget --loss-db-km 0.2 --length-m 100 --pulse-ns 50 --out " + s.path("b.json")), 0);
  const json doc = json::parse(slurp(s.path("b.json")));
  EXPECT_NEAR(doc["transmission"].get<double>(), 0.9954, 1e-4);
  EXPECT_EQ(doc["capacity"], 10);
  ASSERT_EQ(cvq("budget --loss-db-km 0.2 --length-m 1000 --pulse-ns 50 --format csv --out " + s.path("b.csv")), 0);
  const std::string csv = slurp(s.path("b.csv"));
  EXPECT_NE(csv.find(",100,"), std::string::npos) << csv;
}

TEST(Cli, StreamReportsSqueezedRatio) {
  Scratch s;
  ASSERT_EQ(cvq("stream --spec 1d --pulses 100000 --squeezing 15dB --out " + s.path("s.json")), 0);
  const json doc = json::parse(slurp(s.path("s.json")));
  EXPECT_EQ(doc["slots"], 100000);
  EXPECT_LE(doc["peak_active"].get<int>(), 4);
  for (const auto& f : doc["forms"]) {
    EXPECT_NEAR(f["min_ratio"].get<double>(), std::pow(10.0, -1.5), 1e-9);
    EXPECT_NEAR(f["max_ratio"].get<double>(), std::pow(10.0, -1.5), 1e-9);
  }
  ASSERT_EQ(cvq("stream --spec 2d --width 3 --steps 10 --squeezing 1r --slot-csv " + s.path("slots.csv") + " --out " + s.path("s2.json")), 0);
  EXPECT_EQ(slurp(s.path("slots.csv")).rfind("slot,source_slot,form,variance,ratio\n", 0), 0u);
}

TEST(Cli, LoopCertifiesGhz) {
  Scratch s;
  ASSERT_EQ(cvq("loop --kind ghz --modes 4 --squeezing 15dB --out " + s.path("l.json")), 0);
  const json doc = json::parse(slurp(s.path("l.json")));
  EXPECT_EQ(doc["modes"], 4);
  ASSERT_FALSE(doc["certificates"].empty());
  for (const auto& c : doc["certificates"]) EXPECT_NEAR(c["ratio"].get<double>(), std::pow(10.0, -1.5), 1e-9);
}

TEST(Cli, GkpCurveCsv) {
  Scratch s;
  ASSERT_EQ(cvq("gkp --seed 3 --samples 20000 --skip-state --format csv --out " + s.path("g.csv")), 0);
  std::istringstream lines(slurp(s.path("g.csv")));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "sigma,p_closed_form,p_monte_carlo,stderr");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST(Cli, ExitCodes) {
  Scratch s;
  const std::string quiet = " >/dev/null 2>" + s.path("err.txt");
  EXPECT_EQ(cvq("--bogus" + quiet), 1);
  EXPECT_EQ(cvq("" + quiet), 1);
  EXPECT_EQ(cvq("run /nonexistent/file.cvq --seed 1" + quiet), 1);
  EXPECT_EQ(cvq("budget --pulse-ns -1" + quiet), 1);
  EXPECT_EQ(cvq("gkp --skip-state" + quiet), 1);  // sampling without a seed

  std::ofstream(s.path("noseed.cvq")) << "mode a;\nhom a -> m;\n";
  EXPECT_EQ(cvq("run " + s.path("noseed.cvq") + quiet), 1);

  std::ofstream(s.path("bad.cvq")) << "mode q0;\nhom q0 theta=0 -> m0;\nps q0 1;\n";
  EXPECT_EQ(cvq("run " + s.path("bad.cvq") + " --seed 1" + quiet), 2);
  const json diag = json::parse(slurp(s.path("err.txt")));
  EXPECT_EQ(diag["error"], "parse");
  EXPECT_EQ(diag["line"], 3);
  EXPECT_EQ(diag["column"], 4);
  EXPECT_EQ(diag["message"], "mode q0 consumed");

  std::ofstream(s.path("cubic.cvq")) << "mode a;\ncubic a gamma=0.1;\n";
  EXPECT_EQ(cvq("run " + s.path("cubic.cvq") + " --seed 1 --backend gaussian" + quiet), 2);
  EXPECT_EQ(json::parse(slurp(s.path("err.txt")))["error"], "validate");
  EXPECT_EQ(cvq("run " + s.path("cubic.cvq") + " --seed 1 --backend fock" + quiet), 0);

  // leakage past the Fock budget is a physics error
  std::ofstream(s.path("leak.cvq")) << "cutoff 10;\nmode a;\nsq a 2r x;\n";
  EXPECT_EQ(cvq("run " + s.path("leak.cvq") + " --seed 1 --backend fock" + quiet), 2);
  EXPECT_EQ(json::parse(slurp(s.path("err.txt")))["error"], "runtime");
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  Scratch s;
  ASSERT_EQ(cvq("budget --format csv", "CVQ_OUT_DIR=" + s.path("outdir")), 0);
  EXPECT_TRUE(fs::exists(s.path("outdir") + "/budget.csv"));
}

}  // namespace
