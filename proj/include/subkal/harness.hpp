#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "subkal/filters.hpp"
#include "subkal/io.hpp"
#include "subkal/lorenz2.hpp"
#include "subkal/model_ops.hpp"
#include "subkal/subspace.hpp"
#include "subkal/types.hpp"

namespace subkal {

using Json = nlohmann::json;

// ------------------------------------------------------------------
// Experiment configuration (JSON file; // and /* */ comments allowed).

struct ModelSection {
  std::string kind = "lorenz2";  // lorenz2 | linear_random
  // lorenz2
  int n = 240;
  int k_smooth = 33;
  double forcing = 14.0;
  double dt = 0.025;
  int steps_per_obs = 2;
  // linear_random
  int dim = 20;
  int obs_dim = 8;
  std::uint64_t seed = 1;
  double spectral_radius = 0.9;
  double q_scale = 0.05;
};

struct TruthSection {
  int n_obs = 400;
  int spin_up_steps = 4000;        // RK4 steps before data generation
  double forcing_noise_rel = 0.01;
  std::string forcing_noise_mode = "per_step";  // per_step | per_obs | per_run
  int obs_stride = 10;             // every k-th component observed (lorenz2)
  double obs_noise_std = 1.0;
  std::uint64_t seed = 2026;
};

struct SnapshotSection {
  int count = 1200;
  int spacing = 1;     // observation intervals between snapshots
  int spin_up = 100;   // observation intervals before the first snapshot
  std::uint64_t seed = 101;
};

struct GpSection {
  double init_variance = 1.0;
  double init_length = 5.0;
  double prior_log_variance_sd = -1.0;  // <= 0: flat
  double prior_log_length_sd = -1.0;
  int max_iterations = 300;
};

struct GmrfSection {
  int alpha_hat = 2;
  double gamma_rate = 1.0;  // exponential prior rate (mean 1/rate)
  double nu_prior_tau = 10.0;
  int max_iterations = 500;
};

struct BasisSection {
  std::string source = "pca";  // pca | gp | gmrf
  int r = 8;
  GpSection gp;
  GmrfSection gmrf;
};

struct FilterSection {
  std::string kind = "reduced_ekf";  // kf|ekf|enkf|reduced_kf|reduced_ekf|reduced_enkf|rokf
  std::string parameterization = "prior_mean_centered";  // or fixed_offset
  double beta = 0.08;                // Q = beta I
  int n_ens = 0;
  double localization_cutoff = 0.0;  // 0 disables tapering
  std::uint64_t seed = 7;
  std::string tangent = "fd";        // fd | analytic
};

struct MetricsSection {
  int burn_in = 100;  // summary RMSE over steps burn_in..n_obs (1-based)
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelSection model;
  TruthSection truth;
  SnapshotSection snapshots;
  BasisSection basis;
  FilterSection filter;
  MetricsSection metrics;
  bool record_timing = true;
  bool record_means = false;
  std::string output_dir = "out";
};

ExperimentConfig parse_config(const Json& j);
Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

// Applies "dotted.path=value" overrides; values parsed as JSON when possible.
Json apply_overrides(Json config, const std::vector<std::string>& overrides);

// Content hash of a canonical JSON subtree (sorted keys).
std::string json_hash(const Json& j);

// ------------------------------------------------------------------
// Run records.

struct StepRecord {
  int step = 0;  // 1-based observation index
  double rmse = 0.0;
  std::string mean_hash;
  bool ok = true;
  Vec mean;  // analysis mean, stored only when record_means is set
};

struct RunSummary {
  std::string name;
  std::string config_hash;
  std::string filter;
  std::string basis;
  std::string parameterization;
  int r = 0;
  int n_ens = 0;
  double beta = 0.0;
  double localization_cutoff = 0.0;
  int k_smooth = 0;
  double mean_rmse = 0.0;
  bool diverged = false;
  double wall_ms = 0.0;
  std::uint64_t model_applies = 0;
  std::uint64_t obs_applies = 0;
  int steps_run = 0;
  double clim_std = 0.0;
};

struct RunRecord {
  std::vector<StepRecord> steps;
  RunSummary summary;
};

// ------------------------------------------------------------------
// Pipeline operations. All artifacts are content-addressed inside the
// config's output directory and reused when present.

double rmse(const Vec& estimate, const Vec& truth);

TruthData generate_truth_and_obs(const ExperimentConfig& cfg);
SnapshotSet generate_snapshots(const ExperimentConfig& cfg);
SubspaceBasis fit_basis(const ExperimentConfig& cfg, const SnapshotSet& snaps,
                        Vec* energy_curve = nullptr);

// Load-or-create entries of the artifact store. Return the file path used.
std::string ensure_truth(const ExperimentConfig& cfg, TruthData* out = nullptr);
std::string ensure_snapshots(const ExperimentConfig& cfg, SnapshotSet* out = nullptr);
std::string ensure_basis(const ExperimentConfig& cfg, SubspaceBasis* out = nullptr);

// Runs the configured filter over all observation times, streams a JSON-lines
// run record plus a summary JSON into the output directory, and returns the
// record. Filter failures mark the run diverged instead of aborting.
RunRecord run_experiment(const ExperimentConfig& cfg);

// ------------------------------------------------------------------
// The 2-D geometric comparison of covariance vs precision projection.

struct RokfTrial {
  double marginal = 0.0;     // P' C P
  double conditional = 0.0;  // (P' C^-1 P)^-1
  Mat propagated_cov;        // the 2x2 forecast covariance C
};

// For each trial: random 2x2 evolution with N(0,1) entries, subspace = x-axis
// (P = [1, 0]'), initial subspace variance psi, C = (MP) psi (MP)' + Q.
std::vector<RokfTrial> rokf_demo(std::uint64_t seed, int n_trials, double q_scale = 0.1,
                                 double psi = 1.0);

// ------------------------------------------------------------------
// Grid sweeps.

struct SweepResult {
  std::vector<RunSummary> summaries;  // sorted by config hash
};

// Cartesian product over {dotted path -> values}; cells run on `jobs`
// worker threads, each cell a full run_experiment.
SweepResult grid_search(const Json& base_config,
                        const std::map<std::string, std::vector<Json>>& grid, int jobs);

// ------------------------------------------------------------------
// Reporting: scans an output directory for run summaries / bases and emits
// the summary CSV and per-figure CSVs. Returns the paths written.

std::vector<std::string> write_reports(const std::string& dir);
std::string summary_csv_line(const RunSummary& s);
std::string summary_csv_header();

void save_run_record(const RunRecord& record, const ExperimentConfig& cfg);

}  // namespace subkal
