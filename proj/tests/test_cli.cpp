#include "json.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(L1OCP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("l1ocp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SolveWritesReport) {
  const auto cfg = write("run.json", R"({"levels": [3], "solvers": [{"name": "ihadmm"}]})");
  EXPECT_EQ(run("solve --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0);
  const auto report = nlohmann::json::parse(slurp(dir_ / "out" / "report.json"));
  EXPECT_TRUE(report.at("converged").get<bool>());
  EXPECT_EQ(report.at("level").get<int>(), 3);
  EXPECT_LE(report.at("final_eta").get<double>(), 1e-6);
  EXPECT_EQ(slurp(dir_ / "out" / "convergence.csv").substr(0, 44), "iter,eta1,eta2,eta3,eta4,eta5,eta,Rh,inner_i");
  EXPECT_TRUE(fs::exists(dir_ / "out" / "solution.csv"));
}

TEST_F(Cli, SolveFailureAndBadConfig) {
  const auto one = write("one.json", R"({"levels": [3], "solvers": [{"name": "ihadmm", "max_iter": 1}]})");
  EXPECT_EQ(run("solve --config " + one.string() + " --out " + (dir_ / "o1").string()), 1);
  const auto partial = nlohmann::json::parse(slurp(dir_ / "o1" / "report.json"));
  EXPECT_FALSE(partial.at("converged").get<bool>());
  EXPECT_EQ(partial.at("iterations").get<int>(), 1);

  const auto bad = write("bad.json", R"({"levels": [3], "solvers": [)");
  EXPECT_EQ(run("solve --config " + bad.string()), 2);
  EXPECT_EQ(run("solve --config " + (dir_ / "missing.json").string()), 2);
  EXPECT_EQ(run("solve"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(Cli, TableIsDeterministic) {
  const auto cfg = write("t.json", R"({"levels": [3, 4, 5], "solvers": [
      {"name": "ihadmm"}, {"name": "classical_admm", "max_iter": 5000}, {"name": "apg"}]})");
  EXPECT_EQ(run("table --config " + cfg.string() + " --jobs 2 --out " + (dir_ / "a").string()), 0);
  EXPECT_EQ(run("table --config " + cfg.string() + " --out " + (dir_ / "b").string()), 0);
  const std::string a = slurp(dir_ / "a" / "table.csv");
  EXPECT_EQ(a, slurp(dir_ / "b" / "table.csv"));
  std::istringstream is(a);
  std::string line;
  int rows = 0;
  std::getline(is, line);
  EXPECT_NE(line.find("classical_admm_iter"), std::string::npos);
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "table_timings.csv"));
  const auto j = nlohmann::json::parse(slurp(dir_ / "a" / "table.json"));
  EXPECT_EQ(j.at("rows").size(), 3u);
}

TEST_F(Cli, TableFailuresAndEmptyLevels) {
  const auto failing = write("f.json", R"({"levels": [3], "solvers": [{"name": "apg"}, {"name": "ihadmm", "max_iter": 1}]})");
  EXPECT_EQ(run("table --config " + failing.string() + " --out " + (dir_ / "f").string()), 1);
  EXPECT_TRUE(fs::exists(dir_ / "f" / "table.csv"));
  const auto empty = write("e.json", R"({"levels": [], "solvers": [{"name": "apg"}]})");
  EXPECT_EQ(run("table --config " + empty.string()), 2);
  EXPECT_EQ(run("table --config " + failing.string() + " --jobs 0"), 2);
}

TEST_F(Cli, ExportMatrices) {
  EXPECT_EQ(run("export-matrices --level 2 --out " + (dir_ / "m1").string()), 0);
  EXPECT_EQ(run("export-matrices --level 2 --out " + (dir_ / "m2").string()), 0);
  for (const char* f : {"K.mtx", "M.mtx", "W.mtx"}) {
    const std::string a = slurp(dir_ / "m1" / f);
    EXPECT_EQ(a.rfind("%%MatrixMarket", 0), 0u) << f;
    EXPECT_EQ(a, slurp(dir_ / "m2" / f)) << f;
  }
  EXPECT_EQ(run("export-matrices --level 0 --out " + (dir_ / "m0").string()), 2);
}
