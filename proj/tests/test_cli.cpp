#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kLinearConfig = R"({
  "plant": {"kind": "linear", "linear": {"dim": 2, "radius": 0.8}},
  "controls": [-1.0, 0.0, 1.0],
  "collect": {"initial_conditions": [[1.0, 0.0], [0.0, 1.0]], "switching_cycle": [1.0, 0.0, -1.0],
              "switching_hold": 1.0, "duration": 10.0, "dt_sample": 0.5, "lag": 0.5},
  "fit": {"degree": 1},
  "mpc": {"initial_condition": [0.5, -0.5], "duration": 10.0, "window": 2.0,
          "reference": {"times": [5.0], "levels": [0.3, -0.2]}},
  "sweep": {"degrees": [1, 2], "volumes": [6, 12]}
})";

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / (std::string("kmpc_cli_") + info->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int kmpc(const std::string& args) {
  const std::string cmd = std::string(KMPC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_config(const fs::path& dir, const std::string& text = kLinearConfig) {
  std::ofstream(dir / "config.json") << text;
  return dir / "config.json";
}

}  // namespace

TEST(Cli, UsageErrorsExitWithValidationCode) {
  const auto dir = scratch_dir();
  EXPECT_EQ(kmpc(""), 2);
  EXPECT_EQ(kmpc("--help"), 0);
  EXPECT_EQ(kmpc("bogus"), 2);
  EXPECT_EQ(kmpc("collect --no-such-key=1 --out-dir " + dir.string()), 2);
  EXPECT_EQ(kmpc("collect --fit.degree=-3 --out-dir " + dir.string()), 2);
  EXPECT_EQ(kmpc("collect --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(kmpc("fit --out-dir " + (dir / "empty").string()), 2);
  EXPECT_EQ(kmpc("run --out-dir " + (dir / "empty").string()), 2);
  EXPECT_EQ(kmpc("audit --out-dir " + (dir / "empty").string()), 2);
  EXPECT_EQ(kmpc("sweep --jobs 0 --out-dir " + dir.string()), 2);
}

TEST(Cli, BlowUpExitsWithNumericalCode) {
  const auto dir = scratch_dir();
  const auto cfg = write_config(dir, R"({"collect": {"initial_conditions": ["scaled_sin_pi:1e150"], "duration": 1.0}})");
  EXPECT_EQ(kmpc("collect --config " + cfg.string() + " --out-dir " + (dir / "out").string()), 3);
}

TEST(Cli, PipelineWritesManifestsAndAudits) {
  const auto dir = scratch_dir();
  const auto cfg = write_config(dir);
  const std::string common = " --config " + cfg.string() + " --out-dir " + (dir / "out").string();
  ASSERT_EQ(kmpc("collect" + common), 0);
  ASSERT_EQ(kmpc("fit" + common), 0);
  ASSERT_EQ(kmpc("run" + common), 0);
  ASSERT_EQ(kmpc("sweep --jobs 2" + common), 0);
  ASSERT_EQ(kmpc("audit" + common), 0);

  const json collect = json::parse(slurp(dir / "out" / "collect.json"));
  EXPECT_EQ(collect.at("total_pairs").get<long>(), 160);
  EXPECT_EQ(collect.at("sets").size(), 3u);
  const json fit = json::parse(slurp(dir / "out" / "fit.json"));
  EXPECT_EQ(fit.at("k").get<int>(), 3);
  EXPECT_EQ(json::parse(slurp(dir / "out" / "ensemble.json")).at("kind"), "switched");
  const json run = json::parse(slurp(dir / "out" / "run.json"));
  EXPECT_EQ(run.at("krom").at("steps").get<int>(), 20);
  EXPECT_NEAR(run.at("delta_j").get<double>(), 0.0, 1e-9);
  const std::string header = slurp(dir / "out" / "trace_krom.csv").substr(0, 60);
  EXPECT_EQ(header.rfind("t,u,z0,z1,ref0,ref1,stage_cost,window_cost,solve_seconds\n", 0), 0u);
  const json sweep = json::parse(slurp(dir / "out" / "sweep.json"));
  EXPECT_EQ(sweep.at("failed_cells").get<int>(), 0);

  // a tampered stage cost is caught
  const fs::path trace = dir / "out" / "trace_krom.csv";
  std::istringstream lines(slurp(trace));
  std::ostringstream edited;
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    if (n++ == 3) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      cells[6] = "12345";
      line.clear();
      for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
    }
    edited << line << '\n';
  }
  std::ofstream(trace, std::ios::binary) << edited.str();
  EXPECT_EQ(kmpc("audit" + common), 3);
}

TEST(Cli, OutputsAreReproducibleWithoutTiming) {
  const auto dir = scratch_dir();
  const auto cfg = write_config(dir);
  for (const char* name : {"a", "b"}) {
    const std::string common =
        " --config " + cfg.string() + " --output.timing=false --seed 9 --out-dir " + (dir / name).string();
    ASSERT_EQ(kmpc("collect" + common), 0);
    ASSERT_EQ(kmpc("fit --fit.data_volume=20" + common), 0);
    ASSERT_EQ(kmpc("run --fit.data_volume=20" + common), 0);
    ASSERT_EQ(kmpc(std::string("sweep --jobs ") + (name[0] == 'a' ? "1" : "3") + common), 0);
  }
  for (const auto& f : {"snapshots/u0.csv", "snapshots/u2.csv", "models/model_u1.json", "trace_krom.csv",
                        "trace_oracle.csv", "sweep.csv"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const json ra = json::parse(slurp(dir / "a" / "run.json"));
  const json rb = json::parse(slurp(dir / "b" / "run.json"));
  EXPECT_EQ(ra.at("krom"), rb.at("krom"));
  EXPECT_TRUE(ra.at("krom").at("mean_solve_seconds").is_null());
  EXPECT_EQ(ra.at("config").at("seed"), 9);
}
