#include "subkal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <thread>

#include "subkal/errors.hpp"
#include "subkal/gmrf.hpp"
#include "subkal/linear_ssm.hpp"
#include "subkal/rng.hpp"

namespace subkal {

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                const char* section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError(std::string("unknown key '") + it.key() + "' in section '" +
                        section + "'");
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig cfg;
  check_keys(j,
             {"name", "model", "truth", "snapshots", "basis", "filter", "metrics",
              "record_timing", "record_means", "output_dir"},
             "<root>");
  read_field(j, "name", cfg.name);
  read_field(j, "record_timing", cfg.record_timing);
  read_field(j, "record_means", cfg.record_means);
  read_field(j, "output_dir", cfg.output_dir);

  if (j.contains("model")) {
    const Json& m = j.at("model");
    check_keys(m,
               {"kind", "n", "k_smooth", "forcing", "dt", "steps_per_obs", "dim",
                "obs_dim", "seed", "spectral_radius", "q_scale"},
               "model");
    read_field(m, "kind", cfg.model.kind);
    read_field(m, "n", cfg.model.n);
    read_field(m, "k_smooth", cfg.model.k_smooth);
    read_field(m, "forcing", cfg.model.forcing);
    read_field(m, "dt", cfg.model.dt);
    read_field(m, "steps_per_obs", cfg.model.steps_per_obs);
    read_field(m, "dim", cfg.model.dim);
    read_field(m, "obs_dim", cfg.model.obs_dim);
    read_field(m, "seed", cfg.model.seed);
    read_field(m, "spectral_radius", cfg.model.spectral_radius);
    read_field(m, "q_scale", cfg.model.q_scale);
  }
  if (cfg.model.kind != "lorenz2" && cfg.model.kind != "linear_random")
    throw ConfigError("model.kind must be lorenz2 or linear_random");

  if (j.contains("truth")) {
    const Json& t = j.at("truth");
    check_keys(t,
               {"n_obs", "spin_up_steps", "forcing_noise_rel", "forcing_noise_mode",
                "obs_stride", "obs_noise_std", "seed"},
               "truth");
    read_field(t, "n_obs", cfg.truth.n_obs);
    read_field(t, "spin_up_steps", cfg.truth.spin_up_steps);
    read_field(t, "forcing_noise_rel", cfg.truth.forcing_noise_rel);
    read_field(t, "forcing_noise_mode", cfg.truth.forcing_noise_mode);
    read_field(t, "obs_stride", cfg.truth.obs_stride);
    read_field(t, "obs_noise_std", cfg.truth.obs_noise_std);
    read_field(t, "seed", cfg.truth.seed);
  }
  if (cfg.truth.forcing_noise_mode != "per_step" &&
      cfg.truth.forcing_noise_mode != "per_obs" &&
      cfg.truth.forcing_noise_mode != "per_run")
    throw ConfigError("truth.forcing_noise_mode must be per_step, per_obs or per_run");

  if (j.contains("snapshots")) {
    const Json& s = j.at("snapshots");
    check_keys(s, {"count", "spacing", "spin_up", "seed"}, "snapshots");
    read_field(s, "count", cfg.snapshots.count);
    read_field(s, "spacing", cfg.snapshots.spacing);
    read_field(s, "spin_up", cfg.snapshots.spin_up);
    read_field(s, "seed", cfg.snapshots.seed);
  }
  if (cfg.snapshots.spacing < 1) throw ConfigError("snapshots.spacing must be >= 1");
  if (cfg.snapshots.count < 2) throw ConfigError("snapshots.count must be >= 2");

  if (j.contains("basis")) {
    const Json& b = j.at("basis");
    check_keys(b, {"source", "r", "gp", "gmrf"}, "basis");
    read_field(b, "source", cfg.basis.source);
    read_field(b, "r", cfg.basis.r);
    if (b.contains("gp")) {
      const Json& g = b.at("gp");
      check_keys(g,
                 {"init_variance", "init_length", "prior_log_variance_sd",
                  "prior_log_length_sd", "max_iterations"},
                 "basis.gp");
      read_field(g, "init_variance", cfg.basis.gp.init_variance);
      read_field(g, "init_length", cfg.basis.gp.init_length);
      read_field(g, "prior_log_variance_sd", cfg.basis.gp.prior_log_variance_sd);
      read_field(g, "prior_log_length_sd", cfg.basis.gp.prior_log_length_sd);
      read_field(g, "max_iterations", cfg.basis.gp.max_iterations);
    }
    if (b.contains("gmrf")) {
      const Json& g = b.at("gmrf");
      check_keys(g, {"alpha_hat", "gamma_rate", "nu_prior_tau", "max_iterations"},
                 "basis.gmrf");
      read_field(g, "alpha_hat", cfg.basis.gmrf.alpha_hat);
      read_field(g, "gamma_rate", cfg.basis.gmrf.gamma_rate);
      read_field(g, "nu_prior_tau", cfg.basis.gmrf.nu_prior_tau);
      read_field(g, "max_iterations", cfg.basis.gmrf.max_iterations);
    }
  }
  basis_source_from_string(cfg.basis.source);  // validates
  if (cfg.basis.r < 1) throw ConfigError("basis.r must be >= 1");

  if (j.contains("filter")) {
    const Json& f = j.at("filter");
    check_keys(f,
               {"kind", "parameterization", "beta", "n_ens", "localization_cutoff",
                "seed", "tangent"},
               "filter");
    read_field(f, "kind", cfg.filter.kind);
    read_field(f, "parameterization", cfg.filter.parameterization);
    read_field(f, "beta", cfg.filter.beta);
    read_field(f, "n_ens", cfg.filter.n_ens);
    read_field(f, "localization_cutoff", cfg.filter.localization_cutoff);
    read_field(f, "seed", cfg.filter.seed);
    read_field(f, "tangent", cfg.filter.tangent);
  }
  static const char* kKinds[] = {"kf",          "ekf",          "enkf",
                                 "reduced_kf",  "reduced_ekf",  "reduced_enkf",
                                 "rokf"};
  bool kind_ok = false;
  for (const char* k : kKinds) kind_ok = kind_ok || cfg.filter.kind == k;
  if (!kind_ok) throw ConfigError("unknown filter.kind '" + cfg.filter.kind + "'");
  if (cfg.filter.parameterization != "prior_mean_centered" &&
      cfg.filter.parameterization != "fixed_offset")
    throw ConfigError("filter.parameterization must be prior_mean_centered or fixed_offset");
  if (cfg.filter.tangent != "fd" && cfg.filter.tangent != "analytic")
    throw ConfigError("filter.tangent must be fd or analytic");
  if (!(cfg.filter.beta > 0.0)) throw ConfigError("filter.beta must be positive");

  if (j.contains("metrics")) {
    const Json& m = j.at("metrics");
    check_keys(m, {"burn_in"}, "metrics");
    read_field(m, "burn_in", cfg.metrics.burn_in);
  }
  return cfg;
}

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["name"] = cfg.name;
  j["record_timing"] = cfg.record_timing;
  j["record_means"] = cfg.record_means;
  j["output_dir"] = cfg.output_dir;
  Json& m = j["model"];
  m["kind"] = cfg.model.kind;
  if (cfg.model.kind == "lorenz2") {
    m["n"] = cfg.model.n;
    m["k_smooth"] = cfg.model.k_smooth;
    m["forcing"] = cfg.model.forcing;
    m["dt"] = cfg.model.dt;
    m["steps_per_obs"] = cfg.model.steps_per_obs;
  } else {
    m["dim"] = cfg.model.dim;
    m["obs_dim"] = cfg.model.obs_dim;
    m["seed"] = cfg.model.seed;
    m["spectral_radius"] = cfg.model.spectral_radius;
    m["q_scale"] = cfg.model.q_scale;
  }
  Json& t = j["truth"];
  t["n_obs"] = cfg.truth.n_obs;
  t["spin_up_steps"] = cfg.truth.spin_up_steps;
  t["forcing_noise_rel"] = cfg.truth.forcing_noise_rel;
  t["forcing_noise_mode"] = cfg.truth.forcing_noise_mode;
  t["obs_stride"] = cfg.truth.obs_stride;
  t["obs_noise_std"] = cfg.truth.obs_noise_std;
  t["seed"] = cfg.truth.seed;
  Json& s = j["snapshots"];
  s["count"] = cfg.snapshots.count;
  s["spacing"] = cfg.snapshots.spacing;
  s["spin_up"] = cfg.snapshots.spin_up;
  s["seed"] = cfg.snapshots.seed;
  Json& b = j["basis"];
  b["source"] = cfg.basis.source;
  b["r"] = cfg.basis.r;
  if (cfg.basis.source == "gp") {
    b["gp"]["init_variance"] = cfg.basis.gp.init_variance;
    b["gp"]["init_length"] = cfg.basis.gp.init_length;
    b["gp"]["prior_log_variance_sd"] = cfg.basis.gp.prior_log_variance_sd;
    b["gp"]["prior_log_length_sd"] = cfg.basis.gp.prior_log_length_sd;
    b["gp"]["max_iterations"] = cfg.basis.gp.max_iterations;
  }
  if (cfg.basis.source == "gmrf") {
    b["gmrf"]["alpha_hat"] = cfg.basis.gmrf.alpha_hat;
    b["gmrf"]["gamma_rate"] = cfg.basis.gmrf.gamma_rate;
    b["gmrf"]["nu_prior_tau"] = cfg.basis.gmrf.nu_prior_tau;
    b["gmrf"]["max_iterations"] = cfg.basis.gmrf.max_iterations;
  }
  Json& f = j["filter"];
  f["kind"] = cfg.filter.kind;
  f["parameterization"] = cfg.filter.parameterization;
  f["beta"] = cfg.filter.beta;
  f["n_ens"] = cfg.filter.n_ens;
  f["localization_cutoff"] = cfg.filter.localization_cutoff;
  f["seed"] = cfg.filter.seed;
  f["tangent"] = cfg.filter.tangent;
  j["metrics"]["burn_in"] = cfg.metrics.burn_in;
  return j;
}

ExperimentConfig load_config_file(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_file(path), nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  return parse_config(j);
}

Json apply_overrides(Json config, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value: " + ov);
    const std::string path = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    Json parsed;
    try {
      parsed = Json::parse(value);
    } catch (const nlohmann::json::exception&) {
      parsed = value;  // plain string
    }
    Json* node = &config;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (key.empty()) throw ConfigError("bad override path: " + path);
      if (dot == std::string::npos) {
        (*node)[key] = parsed;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return config;
}

std::string json_hash(const Json& j) {
  const std::string dump = j.dump();
  return hash_hex(fnv1a64(dump.data(), dump.size()));
}

double rmse(const Vec& estimate, const Vec& truth) {
  if (estimate.size() != truth.size()) throw DimensionMismatch("rmse: length mismatch");
  return (estimate - truth).norm() / std::sqrt(double(estimate.size()));
}

// ------------------------------------------------------------------
// Model bundles.

namespace {

struct ModelBundle {
  NonlinearModelOps nl;
  std::optional<LinearModelOps> lin;
  std::shared_ptr<ApplyCounters> counters;
  std::vector<int> obs_indices;  // lorenz2 selection operator
  RingMesh mesh;
};

std::vector<int> lorenz_obs_indices(int n, int stride) {
  std::vector<int> idx;
  for (int i = 0; i < n; i += stride) idx.push_back(i);
  return idx;
}

ModelBundle make_model(const ExperimentConfig& cfg) {
  ModelBundle mb;
  mb.counters = std::make_shared<ApplyCounters>();
  if (cfg.model.kind == "lorenz2") {
    const LorenzIIConfig lorenz = make_lorenz2_config(cfg.model.n, cfg.model.k_smooth,
                                                      cfg.model.forcing, cfg.model.dt);
    const int steps = cfg.model.steps_per_obs;
    mb.obs_indices = lorenz_obs_indices(cfg.model.n, cfg.truth.obs_stride);
    const std::vector<int> idx = mb.obs_indices;
    const int m = int(idx.size());
    mb.mesh = RingMesh{cfg.model.n, 1.0};

    NonlinearModelOps ops;
    ops.state_dim = cfg.model.n;
    ops.obs_dim = m;
    ops.observe_is_linear = true;
    ops.q = SpdOperator::scaled_identity(cfg.model.n, cfg.filter.beta);
    ops.r_cov = SpdOperator::scaled_identity(
        m, cfg.truth.obs_noise_std * cfg.truth.obs_noise_std);
    auto cnt = mb.counters;
    ops.counters = cnt;
    ops.evolve = [lorenz, steps, cnt](const Vec& x) {
      ++cnt->evolve;
      return lorenz2_flow(x, lorenz, steps);
    };
    auto select = [idx, m](const Vec& x) {
      Vec y(m);
      for (int i = 0; i < m; ++i) y(i) = x(idx[i]);
      return y;
    };
    ops.observe = [select, cnt](const Vec& x) {
      ++cnt->observe;
      return select(x);
    };
    ops.tangent_observe = [select, cnt](const Vec&, const Vec& v) {
      ++cnt->tangent_observe;
      return select(v);
    };
    if (cfg.filter.tangent == "analytic") {
      ops.tangent_evolve = [lorenz, steps, cnt](const Vec& x, const Vec& v) {
        ++cnt->tangent_evolve;
        return lorenz2_flow_tangent(x, v, lorenz, steps);
      };
    } else {
      ops.tangent_evolve = [lorenz, steps, cnt](const Vec& x, const Vec& v) {
        ++cnt->tangent_evolve;
        auto flow = [&lorenz, steps](const Vec& s) { return lorenz2_flow(s, lorenz, steps); };
        return central_difference_tangent(flow, x, v);
      };
    }
    mb.nl = std::move(ops);
  } else {
    LinearSSMConfig lin_cfg = random_linear_ssm(
        cfg.model.dim, cfg.model.obs_dim, cfg.model.seed, cfg.model.spectral_radius,
        cfg.model.q_scale, cfg.truth.obs_noise_std * cfg.truth.obs_noise_std);
    mb.mesh = RingMesh{cfg.model.dim, 1.0};
    mb.lin = linear_ssm_ops(lin_cfg, mb.counters);
    mb.nl = linear_ssm_nonlinear_ops(lin_cfg, mb.counters);
  }
  return mb;
}

}  // namespace

// ------------------------------------------------------------------
// Data generation.

TruthData generate_truth_and_obs(const ExperimentConfig& cfg) {
  TruthData data;
  const std::uint64_t seed = cfg.truth.seed;
  if (cfg.model.kind == "lorenz2") {
    const LorenzIIConfig lorenz = make_lorenz2_config(cfg.model.n, cfg.model.k_smooth,
                                                      cfg.model.forcing, cfg.model.dt);
    const int n = cfg.model.n;
    data.obs_indices = lorenz_obs_indices(n, cfg.truth.obs_stride);
    const int m = int(data.obs_indices.size());

    CounterRng init_rng(derive_seed(seed, 1));
    Vec x = lorenz.forcing;
    for (int i = 0; i < n; ++i) x(i) *= 1.0 + 0.01 * init_rng.normal(i);
    x = lorenz2_flow(x, lorenz, cfg.truth.spin_up_steps);

    int redraw = 1;
    if (cfg.truth.forcing_noise_mode == "per_obs") redraw = cfg.model.steps_per_obs;
    if (cfg.truth.forcing_noise_mode == "per_run") redraw = 0;

    data.truth = Mat(n, cfg.truth.n_obs);
    data.obs = Mat(m, cfg.truth.n_obs);
    CounterRng obs_rng(derive_seed(seed, 3));
    for (int k = 0; k < cfg.truth.n_obs; ++k) {
      x = lorenz2_flow_perturbed(x, lorenz, cfg.model.steps_per_obs,
                                 cfg.truth.forcing_noise_rel, derive_seed(seed, 2),
                                 std::uint64_t(k) * cfg.model.steps_per_obs, redraw);
      data.truth.col(k) = x;
      for (int i = 0; i < m; ++i)
        data.obs(i, k) = x(data.obs_indices[i]) +
                         cfg.truth.obs_noise_std * obs_rng.normal(std::uint64_t(k) * m + i);
    }
  } else {
    LinearSSMConfig lin_cfg = random_linear_ssm(
        cfg.model.dim, cfg.model.obs_dim, cfg.model.seed, cfg.model.spectral_radius,
        cfg.model.q_scale, cfg.truth.obs_noise_std * cfg.truth.obs_noise_std);
    const int d = cfg.model.dim, m = cfg.model.obs_dim;
    CounterRng proc_rng(derive_seed(seed, 2));
    CounterRng obs_rng(derive_seed(seed, 3));
    Vec x = Vec::Zero(d);
    const double q_std = std::sqrt(cfg.model.q_scale);
    std::uint64_t draw = 0;
    for (int k = 0; k < cfg.truth.spin_up_steps; ++k) {
      x = lin_cfg.m_matrix * x;
      for (int i = 0; i < d; ++i) x(i) += q_std * proc_rng.normal(draw++);
    }
    data.truth = Mat(d, cfg.truth.n_obs);
    data.obs = Mat(m, cfg.truth.n_obs);
    for (int k = 0; k < cfg.truth.n_obs; ++k) {
      x = lin_cfg.m_matrix * x;
      for (int i = 0; i < d; ++i) x(i) += q_std * proc_rng.normal(draw++);
      data.truth.col(k) = x;
      Vec y = lin_cfg.h_matrix * x;
      for (int i = 0; i < m; ++i)
        y(i) += cfg.truth.obs_noise_std * obs_rng.normal(std::uint64_t(k) * m + i);
      data.obs.col(k) = y;
    }
  }

  // Climatological spread of the truth: per-component time means, pooled
  // variance over all (component, time) entries.
  Vec mean = data.truth.rowwise().mean();
  Mat centered = data.truth.colwise() - mean;
  data.clim_std = std::sqrt(centered.array().square().sum() /
                            double(centered.rows() * centered.cols()));
  return data;
}

SnapshotSet generate_snapshots(const ExperimentConfig& cfg) {
  SnapshotSet snaps;
  if (cfg.snapshots.spacing < 1) throw ConfigError("snapshots.spacing must be >= 1");
  if (cfg.model.kind == "lorenz2") {
    const LorenzIIConfig lorenz = make_lorenz2_config(cfg.model.n, cfg.model.k_smooth,
                                                      cfg.model.forcing, cfg.model.dt);
    const int n = cfg.model.n;
    CounterRng init_rng(derive_seed(cfg.snapshots.seed, 4));
    Vec x = lorenz.forcing;
    for (int i = 0; i < n; ++i) x(i) *= 1.0 + 0.01 * init_rng.normal(i);
    x = lorenz2_flow(x, lorenz, cfg.snapshots.spin_up * cfg.model.steps_per_obs);
    snaps.snapshots = Mat(n, cfg.snapshots.count);
    for (int c = 0; c < cfg.snapshots.count; ++c) {
      x = lorenz2_flow(x, lorenz, cfg.snapshots.spacing * cfg.model.steps_per_obs);
      snaps.snapshots.col(c) = x;
    }
    snaps.mesh = RingMesh{n, 1.0};
  } else {
    LinearSSMConfig lin_cfg = random_linear_ssm(
        cfg.model.dim, cfg.model.obs_dim, cfg.model.seed, cfg.model.spectral_radius,
        cfg.model.q_scale, cfg.truth.obs_noise_std * cfg.truth.obs_noise_std);
    const int d = cfg.model.dim;
    CounterRng proc_rng(derive_seed(cfg.snapshots.seed, 4));
    const double q_std = std::sqrt(cfg.model.q_scale);
    Vec x = Vec::Zero(d);
    std::uint64_t draw = 0;
    auto advance = [&](int steps) {
      for (int s = 0; s < steps; ++s) {
        x = lin_cfg.m_matrix * x;
        for (int i = 0; i < d; ++i) x(i) += q_std * proc_rng.normal(draw++);
      }
    };
    advance(cfg.snapshots.spin_up);
    snaps.snapshots = Mat(d, cfg.snapshots.count);
    for (int c = 0; c < cfg.snapshots.count; ++c) {
      advance(cfg.snapshots.spacing);
      snaps.snapshots.col(c) = x;
    }
    snaps.mesh = RingMesh{d, 1.0};
  }
  if (!snaps.snapshots.allFinite())
    throw NonFiniteState("generate_snapshots: free run blew up");
  return snaps;
}

SubspaceBasis fit_basis(const ExperimentConfig& cfg, const SnapshotSet& snaps,
                        Vec* energy_curve) {
  const int d = snaps.dim();
  const int r = cfg.basis.r;
  if (r > d) throw ConfigError("basis.r exceeds the state dimension");
  const BasisSource source = basis_source_from_string(cfg.basis.source);
  Vec mean = snaps.snapshots.rowwise().mean();

  Vec full_values;
  Mat full_vectors;
  if (source == BasisSource::Pca) {
    auto [mu, cov] = empirical_covariance(snaps);
    EigenPairs pairs = leading_eigenpairs(cov, d);
    full_values = pairs.values;
    full_vectors = pairs.vectors;
  } else if (source == BasisSource::Gp) {
    GpLogPrior prior;
    prior.log_variance_sd = cfg.basis.gp.prior_log_variance_sd;
    prior.log_length_sd = cfg.basis.gp.prior_log_length_sd;
    OptimOptions opts;
    opts.max_iterations = cfg.basis.gp.max_iterations;
    GpFit fit = gp_map_fit(snaps, prior,
                           KernelParams{cfg.basis.gp.init_variance, cfg.basis.gp.init_length},
                           opts);
    Mat sigma = sq_exp_kernel_matrix(snaps.mesh, fit.params);
    EigenPairs pairs = leading_eigenpairs(sigma, d);
    full_values = pairs.values;
    full_vectors = pairs.vectors;
  } else {
    GmrfPrior prior = default_gmrf_prior(d, cfg.basis.gmrf.gamma_rate,
                                         cfg.basis.gmrf.nu_prior_tau);
    OptimOptions opts;
    opts.max_iterations = cfg.basis.gmrf.max_iterations;
    GmrfFit fit = gmrf_map_fit(snaps, cfg.basis.gmrf.alpha_hat, prior, opts);
    SubspaceBasis full = basis_from_precision(fit.model, d, mean);
    full_values = full.eigenvalues;
    // Recover unit eigenvectors from the scaled columns.
    full_vectors = Mat(d, d);
    for (int c = 0; c < d; ++c)
      full_vectors.col(c) = full.eigenvalues(c) > 0.0
                                ? Vec(full.P.col(c) / std::sqrt(full.eigenvalues(c)))
                                : Vec(full.P.col(c));
  }

  if (energy_curve) *energy_curve = cumulative_energy(full_values).fraction;
  SubspaceBasis basis = build_basis(full_values.head(r), full_vectors.leftCols(r), mean,
                                    source);
  return basis;
}

// ------------------------------------------------------------------
// Artifact store.

namespace {

std::string artifact_dir(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

Json truth_key(const ExperimentConfig& cfg) {
  Json full = config_to_json(cfg);
  Json j;
  j["model"] = full["model"];
  j["truth"] = full["truth"];
  return j;
}

Json snaps_key(const ExperimentConfig& cfg) {
  Json full = config_to_json(cfg);
  Json j;
  j["model"] = full["model"];
  j["snapshots"] = full["snapshots"];
  return j;
}

Json basis_key(const ExperimentConfig& cfg) {
  Json j = snaps_key(cfg);
  j["basis"] = config_to_json(cfg)["basis"];
  return j;
}

Json run_key(const ExperimentConfig& cfg) {
  Json j = config_to_json(cfg);
  j.erase("output_dir");
  return j;
}

}  // namespace

std::string ensure_truth(const ExperimentConfig& cfg, TruthData* out) {
  const std::string path =
      artifact_dir(cfg) + "/truth_" + json_hash(truth_key(cfg)) + ".bin";
  if (file_exists(path)) {
    if (out) *out = load_truth(path);
    return path;
  }
  TruthData data = generate_truth_and_obs(cfg);
  save_truth(path, data);
  if (out) *out = std::move(data);
  return path;
}

std::string ensure_snapshots(const ExperimentConfig& cfg, SnapshotSet* out) {
  const std::string path =
      artifact_dir(cfg) + "/snaps_" + json_hash(snaps_key(cfg)) + ".csv";
  if (file_exists(path)) {
    if (out) *out = load_snapshots(path);
    return path;
  }
  SnapshotSet snaps = generate_snapshots(cfg);
  save_snapshots(path, snaps);
  if (out) *out = std::move(snaps);
  return path;
}

std::string ensure_basis(const ExperimentConfig& cfg, SubspaceBasis* out) {
  const std::string hash = json_hash(basis_key(cfg));
  const std::string path = artifact_dir(cfg) + "/basis_" + hash + ".json";
  if (file_exists(path)) {
    if (out) *out = load_basis(path);
    return path;
  }
  SnapshotSet snaps;
  ensure_snapshots(cfg, &snaps);
  Vec energy;
  SubspaceBasis basis = fit_basis(cfg, snaps, &energy);
  save_basis(path, basis, energy, cfg.model.kind == "lorenz2" ? cfg.model.k_smooth : 0,
             hash);
  if (out) *out = std::move(basis);
  return path;
}

// ------------------------------------------------------------------
// Experiment driver.

RunRecord run_experiment(const ExperimentConfig& cfg) {
  const std::string kind = cfg.filter.kind;
  const bool needs_lin = (kind == "kf" || kind == "reduced_kf" || kind == "rokf");
  if (needs_lin && cfg.model.kind != "linear_random")
    throw ConfigError("filter '" + kind + "' needs a linear model (model.kind=linear_random)");
  const bool needs_basis =
      (kind == "reduced_kf" || kind == "reduced_ekf" || kind == "reduced_enkf" ||
       kind == "rokf");
  const ParamMode mode = cfg.filter.parameterization == "fixed_offset"
                             ? ParamMode::FixedOffset
                             : ParamMode::PriorMeanCentered;

  TruthData data;
  ensure_truth(cfg, &data);
  SubspaceBasis basis;
  if (needs_basis) ensure_basis(cfg, &basis);

  ModelBundle mb = make_model(cfg);
  const int d = mb.nl.state_dim;

  LocalizationTaper taper;
  const LocalizationTaper* taper_ptr = nullptr;
  if (kind == "enkf" && cfg.filter.localization_cutoff > 0.0) {
    taper = gaspari_cohn_taper(mb.mesh, cfg.filter.localization_cutoff);
    taper_ptr = &taper;
  }

  FilterState st;
  if (needs_basis)
    st = initial_reduced_state(basis.rank(), Vec::Zero(d));
  else
    st = initial_full_state(Vec::Zero(d), Mat::Identity(d, d));

  RunRecord record;
  record.summary.name = cfg.name;
  record.summary.config_hash = json_hash(run_key(cfg));
  record.summary.filter = kind;
  record.summary.basis = needs_basis ? cfg.basis.source : "";
  record.summary.parameterization = cfg.filter.parameterization;
  record.summary.r = needs_basis ? basis.rank() : 0;
  record.summary.n_ens = cfg.filter.n_ens;
  record.summary.beta = cfg.filter.beta;
  record.summary.localization_cutoff = cfg.filter.localization_cutoff;
  record.summary.k_smooth = cfg.model.kind == "lorenz2" ? cfg.model.k_smooth : 0;
  record.summary.clim_std = data.clim_std;

  const auto t_start = std::chrono::steady_clock::now();
  const double divergence_level = 3.0 * data.clim_std;
  int consecutive_bad = 0;
  bool diverged = false;

  for (int k = 1; k <= cfg.truth.n_obs; ++k) {
    const Vec y = data.obs.col(k - 1);
    StepRecord step;
    step.step = k;
    try {
      const std::uint64_t step_seed = derive_seed(cfg.filter.seed, std::uint64_t(k));
      if (kind == "kf")
        st = kf_step(st, *mb.lin, y);
      else if (kind == "ekf")
        st = ekf_step(st, mb.nl, y);
      else if (kind == "enkf")
        st = enkf_step(st, mb.nl, y, cfg.filter.n_ens, step_seed, taper_ptr);
      else if (kind == "reduced_kf")
        st = reduced_kf_step(st, *mb.lin, basis, y, mode);
      else if (kind == "reduced_ekf")
        st = reduced_ekf_step(st, mb.nl, basis, y, mode);
      else if (kind == "reduced_enkf")
        st = reduced_enkf_step(st, mb.nl, basis, y, cfg.filter.n_ens, step_seed, mode);
      else
        st = rokf_step(st, *mb.lin, basis, y);

      const Vec estimate =
          needs_basis ? reconstruct_state(st, basis, mode) : st.belief.mean;
      step.rmse = rmse(estimate, data.truth.col(k - 1));
      step.mean_hash = hash_vector(estimate);
      step.ok = true;
      if (cfg.record_means) step.mean = estimate;
      record.steps.push_back(step);

      if (step.rmse > divergence_level) {
        if (++consecutive_bad >= 20) diverged = true;
      } else {
        consecutive_bad = 0;
      }
    } catch (const Error&) {
      // A filter failure (blow-up, singular solve) is recorded as divergence,
      // not a run failure.
      step.rmse = std::numeric_limits<double>::quiet_NaN();
      step.ok = false;
      record.steps.push_back(step);
      diverged = true;
      break;
    }
  }

  const auto t_end = std::chrono::steady_clock::now();
  double mean_rmse = 0.0;
  int counted = 0;
  for (const StepRecord& s : record.steps) {
    if (s.ok && s.step >= cfg.metrics.burn_in && s.step <= cfg.truth.n_obs) {
      mean_rmse += s.rmse;
      ++counted;
    }
  }
  record.summary.mean_rmse =
      counted > 0 ? mean_rmse / counted : std::numeric_limits<double>::quiet_NaN();
  record.summary.diverged = diverged;
  record.summary.steps_run = int(record.steps.size());
  record.summary.wall_ms =
      cfg.record_timing
          ? std::chrono::duration<double, std::milli>(t_end - t_start).count()
          : 0.0;
  record.summary.model_applies = mb.counters->evolve + mb.counters->tangent_evolve;
  record.summary.obs_applies = mb.counters->observe + mb.counters->tangent_observe;

  save_run_record(record, cfg);
  return record;
}

// ------------------------------------------------------------------

std::vector<RokfTrial> rokf_demo(std::uint64_t seed, int n_trials, double q_scale,
                                 double psi) {
  std::vector<RokfTrial> trials;
  trials.reserve(n_trials);
  CounterRng rng(seed);
  for (int t = 0; t < n_trials; ++t) {
    Mat m(2, 2);
    m << rng.normal(4 * std::uint64_t(t)), rng.normal(4 * std::uint64_t(t) + 1),
        rng.normal(4 * std::uint64_t(t) + 2), rng.normal(4 * std::uint64_t(t) + 3);
    Vec mp = m.col(0);  // M [1, 0]'
    Mat c = psi * mp * mp.transpose() + q_scale * Mat::Identity(2, 2);
    RokfTrial trial;
    trial.propagated_cov = c;
    trial.marginal = c(0, 0);
    trial.conditional = 1.0 / c.inverse()(0, 0);
    trials.push_back(std::move(trial));
  }
  return trials;
}

SweepResult grid_search(const Json& base_config,
                        const std::map<std::string, std::vector<Json>>& grid, int jobs) {
  // Expand the Cartesian product.
  std::vector<Json> cells{base_config};
  for (const auto& [path, values] : grid) {
    std::vector<Json> next;
    for (const Json& cell : cells)
      for (const Json& v : values) {
        Json copy = cell;
        std::vector<std::string> ov{path + "=" + v.dump()};
        next.push_back(apply_overrides(copy, ov));
      }
    cells = std::move(next);
  }

  std::vector<RunSummary> summaries(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next_cell{0};
  const int workers = std::max(1, jobs);
  auto work = [&]() {
    while (true) {
      const std::size_t i = next_cell.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        ExperimentConfig cfg = parse_config(cells[i]);
        summaries[i] = run_experiment(cfg).summary;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!errors[i].empty())
      throw ConfigError("sweep cell " + std::to_string(i) + " failed: " + errors[i]);

  SweepResult result;
  result.summaries = std::move(summaries);
  std::sort(result.summaries.begin(), result.summaries.end(),
            [](const RunSummary& a, const RunSummary& b) {
              return a.config_hash < b.config_hash;
            });
  return result;
}

}  // namespace subkal
