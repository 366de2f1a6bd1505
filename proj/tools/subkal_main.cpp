#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subkal/errors.hpp"
#include "subkal/harness.hpp"
#include "subkal/io.hpp"

namespace {

constexpr const char* kVersion = "subkal 1.0.0 (config schema v1)";

const char* kConfigSchema = R"(Config file keys (JSON, // comments allowed) and defaults:
  name                        "experiment"   label used in run records
  output_dir                  "out"          artifact/output directory
  record_timing               true           store wall-clock in summaries
  record_means                false          store analysis means in run records
  model.kind                  "lorenz2"      lorenz2 | linear_random
  model.n                     240            state dimension (lorenz2)
  model.k_smooth              33             odd smoothing parameter K
  model.forcing               14.0           constant forcing F
  model.dt                    0.025          RK4 step
  model.steps_per_obs         2              RK4 steps per observation
  model.dim / model.obs_dim   20 / 8         dimensions (linear_random)
  model.seed                  1              system draw seed (linear_random)
  model.spectral_radius       0.9            |eig(M)| rescale (linear_random)
  model.q_scale               0.05           process noise variance (linear_random)
  truth.n_obs                 400            observation times
  truth.spin_up_steps         4000           RK4 steps before data generation
  truth.forcing_noise_rel     0.01           relative forcing perturbation
  truth.forcing_noise_mode    "per_step"     per_step | per_obs | per_run
  truth.obs_stride            10             every k-th component observed
  truth.obs_noise_std         1.0            observation noise std
  truth.seed                  2026
  snapshots.count             1200
  snapshots.spacing           1              observation intervals between snapshots
  snapshots.spin_up           100            observation intervals before sampling
  snapshots.seed              101
  basis.source                "pca"          pca | gp | gmrf
  basis.r                     8
  basis.gp.init_variance      1.0
  basis.gp.init_length        5.0
  basis.gp.prior_log_variance_sd  -1         <=0 disables the prior term
  basis.gp.prior_log_length_sd    -1
  basis.gp.max_iterations     300
  basis.gmrf.alpha_hat        2
  basis.gmrf.gamma_rate       1.0
  basis.gmrf.nu_prior_tau     10.0
  basis.gmrf.max_iterations   500
  filter.kind                 "reduced_ekf"  kf|ekf|enkf|reduced_kf|reduced_ekf|reduced_enkf|rokf
  filter.parameterization     "prior_mean_centered"  or fixed_offset
  filter.beta                 0.08           model error Q = beta I
  filter.n_ens                0              ensemble size
  filter.localization_cutoff  0.0            Gaspari-Cohn cutoff, 0 disables
  filter.seed                 7
  filter.tangent              "fd"           fd | analytic
  metrics.burn_in             100            summary RMSE over steps burn_in..n_obs
)";

using subkal::Json;

Json load_config_json(const std::string& path, const std::vector<std::string>& overrides,
                      long long seed, const char* seed_path) {
  Json j;
  try {
    j = Json::parse(subkal::read_file(path), nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw subkal::ConfigError(std::string("cannot parse config: ") + e.what());
  }
  j = subkal::apply_overrides(j, overrides);
  if (seed >= 0)
    j = subkal::apply_overrides(j, {std::string(seed_path) + "=" + std::to_string(seed)});
  return j;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Subspace-constrained Gaussian filtering toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, grid_path, dir = "out";
  std::vector<std::string> overrides;
  long long seed = -1;
  int jobs = int(std::thread::hardware_concurrency());
  int trials = 1000;
  double q_scale = 0.1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--override", overrides,
                    "dotted-path overrides, e.g. --override basis.r=4");
    cmd->footer(kConfigSchema);
  };

  CLI::App* snapshots = app.add_subcommand("snapshots", "generate the snapshot set");
  add_common(snapshots);
  snapshots->add_option("--seed", seed, "override snapshots.seed");

  CLI::App* fit_basis = app.add_subcommand("fit-basis", "fit the reduction basis");
  add_common(fit_basis);
  fit_basis->add_option("--seed", seed, "override snapshots.seed");

  CLI::App* gen_data = app.add_subcommand("gen-data", "generate truth and observations");
  add_common(gen_data);
  gen_data->add_option("--seed", seed, "override truth.seed");

  CLI::App* run = app.add_subcommand("run", "run one filtering experiment");
  add_common(run);
  run->add_option("--seed", seed, "override filter.seed");

  CLI::App* sweep = app.add_subcommand("sweep", "Cartesian sweep over a parameter grid");
  add_common(sweep);
  sweep->add_option("--grid", grid_path, "JSON file: {\"dotted.path\": [values...]}")
      ->required();
  sweep->add_option("--jobs", jobs, "parallel cells (default: logical cores)");
  sweep->add_option("--seed", seed, "override filter.seed");

  CLI::App* demo =
      app.add_subcommand("rokf-demo", "2-D covariance- vs precision-projection demo");
  long long demo_seed = 1;
  demo->add_option("--trials", trials, "number of random trials");
  demo->add_option("--seed", demo_seed, "demo seed");
  demo->add_option("--q-scale", q_scale, "process noise scale in the demo");
  demo->add_option("--out", dir, "output directory");

  CLI::App* report =
      app.add_subcommand("report", "aggregate run records into summary/figure CSVs");
  report->add_option("--dir", dir, "directory holding run records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Exit contract: 0 for --help/--version, 1 for any usage/validation error.
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (snapshots->parsed()) {
    auto cfg = subkal::parse_config(
        load_config_json(config_path, overrides, seed, "snapshots.seed"));
    std::cout << subkal::ensure_snapshots(cfg) << "\n";
    return 0;
  }
  if (fit_basis->parsed()) {
    auto cfg = subkal::parse_config(
        load_config_json(config_path, overrides, seed, "snapshots.seed"));
    std::cout << subkal::ensure_basis(cfg) << "\n";
    return 0;
  }
  if (gen_data->parsed()) {
    auto cfg =
        subkal::parse_config(load_config_json(config_path, overrides, seed, "truth.seed"));
    std::cout << subkal::ensure_truth(cfg) << "\n";
    return 0;
  }
  if (run->parsed()) {
    auto cfg =
        subkal::parse_config(load_config_json(config_path, overrides, seed, "filter.seed"));
    subkal::RunRecord record = subkal::run_experiment(cfg);
    std::cout << "run " << record.summary.config_hash << " filter=" << record.summary.filter
              << " mean_rmse=" << subkal::format_double(record.summary.mean_rmse)
              << " diverged=" << (record.summary.diverged ? "true" : "false") << "\n"
              << cfg.output_dir << "/run_" << record.summary.config_hash
              << ".summary.json\n";
    return 0;
  }
  if (sweep->parsed()) {
    Json base = load_config_json(config_path, overrides, seed, "filter.seed");
    Json grid_json;
    try {
      grid_json = Json::parse(subkal::read_file(grid_path), nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
      throw subkal::ConfigError(std::string("cannot parse grid: ") + e.what());
    }
    std::map<std::string, std::vector<Json>> grid;
    for (auto it = grid_json.begin(); it != grid_json.end(); ++it) {
      if (!it.value().is_array())
        throw subkal::ConfigError("grid entry must be an array: " + it.key());
      grid[it.key()] = std::vector<Json>(it.value().begin(), it.value().end());
    }
    subkal::SweepResult result = subkal::grid_search(base, grid, jobs);
    std::cout << subkal::summary_csv_header() << "\n";
    for (const auto& s : result.summaries) std::cout << subkal::summary_csv_line(s) << "\n";
    return 0;
  }
  if (demo->parsed()) {
    auto trials_out = subkal::rokf_demo(std::uint64_t(demo_seed), trials, q_scale);
    double worst = 0.0;
    std::ostringstream lines;
    for (std::size_t i = 0; i < trials_out.size(); ++i) {
      const auto& t = trials_out[i];
      worst = std::min(worst, t.marginal - t.conditional);
      Json j;
      j["trial"] = i;
      j["marginal_variance"] = t.marginal;
      j["conditional_variance"] = t.conditional;
      j["propagated_cov"] = {{t.propagated_cov(0, 0), t.propagated_cov(0, 1)},
                             {t.propagated_cov(1, 0), t.propagated_cov(1, 1)}};
      lines << j.dump() << '\n';
    }
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/rokf_demo_" + std::to_string(demo_seed) + "_" +
                             std::to_string(trials) + ".jsonl";
    subkal::write_file_atomic(path, lines.str());
    const bool pass = worst >= -1e-10;
    std::cout << "rokf-demo trials=" << trials
              << " min(marginal - conditional)=" << subkal::format_double(worst) << " "
              << (pass ? "PASS" : "FAIL") << "\n"
              << path << "\n";
    return pass ? 0 : 2;
  }
  if (report->parsed()) {
    for (const std::string& path : subkal::write_reports(dir)) std::cout << path << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const subkal::Error& e) {
    std::cerr << "ERROR(" << e.kind() << "): " << e.what() << "\n";
    const bool validation = e.kind() == "ConfigError" || e.kind() == "IoError" ||
                            e.kind() == "DimensionMismatch";
    return validation ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "ERROR(Internal): " << e.what() << "\n";
    return 2;
  }
}
