#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "subkal/io.hpp"

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::string& workdir) {
  const std::string out_file = workdir + "/cli_output.txt";
  const std::string cmd = std::string("cd ") + workdir + " && " + SUBKAL_CLI_PATH + " " +
                          args + " > cli_output.txt 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WEXITSTATUS(status);
  result.output = subkal::read_file(out_file);
  return result;
}

std::string setup_dir(const std::string& tag) {
  auto path = fs::temp_directory_path() / ("subkal_cli_" + tag);
  fs::remove_all(path);
  fs::create_directories(path);
  return path.string();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const char* kConfig = R"({
  // comments are allowed in config files
  "name": "cli_smoke",
  "model": {"kind": "linear_random", "dim": 8, "obs_dim": 4, "seed": 2, "q_scale": 0.05},
  "truth": {"n_obs": 30, "spin_up_steps": 100, "obs_noise_std": 0.5, "seed": 4},
  "snapshots": {"count": 100, "spacing": 1, "spin_up": 20, "seed": 6},
  "basis": {"source": "pca", "r": 8},
  "filter": {"kind": "reduced_kf", "beta": 0.05, "seed": 8},
  "metrics": {"burn_in": 5},
  "record_timing": false,
  "output_dir": "out"
})";

}  // namespace

TEST_CASE("cli version and usage") {
  const std::string dir = setup_dir("version");
  CliResult version = run_cli("--version", dir);
  CHECK(version.exit_code == 0);
  CHECK(version.output.find("subkal") != std::string::npos);

  CliResult no_verb = run_cli("", dir);
  CHECK(no_verb.exit_code == 1);

  CliResult bad_verb = run_cli("frobnicate", dir);
  CHECK(bad_verb.exit_code == 1);

  CliResult help = run_cli("run --help", dir);
  CHECK(help.exit_code == 0);
  CHECK(help.output.find("filter.beta") != std::string::npos);  // schema documented
}

TEST_CASE("cli run pipeline with overrides") {
  const std::string dir = setup_dir("run");
  write(dir + "/cfg.json", kConfig);

  CliResult run = run_cli("run --config cfg.json --override basis.r=4", dir);
  CHECK(run.exit_code == 0);
  CHECK(run.output.find("mean_rmse=") != std::string::npos);
  CHECK(fs::exists(dir + "/out"));

  // Idempotent re-run, then report.
  CliResult rerun = run_cli("run --config cfg.json --override basis.r=4", dir);
  CHECK(rerun.exit_code == 0);
  CliResult report = run_cli("report --dir out", dir);
  CHECK(report.exit_code == 0);
  CHECK(fs::exists(dir + "/out/summary.csv"));

  CliResult missing = run_cli("run --config nope.json", dir);
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("ERROR(") != std::string::npos);

  write(dir + "/bad.json", "{\"filter\": {\"kind\": \"bogus\"}}");
  CliResult bad = run_cli("run --config bad.json", dir);
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("ERROR(ConfigError)") != std::string::npos);
}

TEST_CASE("cli artifact verbs and demo") {
  const std::string dir = setup_dir("verbs");
  write(dir + "/cfg.json", kConfig);
  CHECK(run_cli("gen-data --config cfg.json", dir).exit_code == 0);
  CHECK(run_cli("snapshots --config cfg.json", dir).exit_code == 0);
  CHECK(run_cli("fit-basis --config cfg.json", dir).exit_code == 0);

  CliResult demo = run_cli("rokf-demo --trials 200 --seed 1 --out out", dir);
  CHECK(demo.exit_code == 0);
  CHECK(demo.output.find("PASS") != std::string::npos);

  write(dir + "/grid.json", "{\"basis.r\": [2, 4]}");
  CliResult sweep = run_cli("sweep --config cfg.json --grid grid.json --jobs 2", dir);
  CHECK(sweep.exit_code == 0);
  CHECK(sweep.output.find("filter,basis,r") != std::string::npos);
}

TEST_CASE("cli reports runtime failures with exit 2") {
  const std::string dir = setup_dir("fail");
  // A GP fit that cannot converge in one iteration.
  std::string cfg(kConfig);
  const auto pos = cfg.find("\"source\": \"pca\"");
  cfg.replace(pos, std::string("\"source\": \"pca\"").size(),
              "\"source\": \"gp\", \"gp\": {\"max_iterations\": 1}");
  write(dir + "/cfg.json", cfg);
  CliResult fit = run_cli("fit-basis --config cfg.json", dir);
  CHECK(fit.exit_code == 2);
  CHECK(fit.output.find("ERROR(OptimFailed)") != std::string::npos);
}
