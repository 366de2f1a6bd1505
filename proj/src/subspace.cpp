#include "subkal/subspace.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "subkal/errors.hpp"
#include "subkal/gaussian.hpp"

namespace subkal {

void validate_snapshots(const SnapshotSet& snaps) {
  if (snaps.count() < 2) throw DimensionMismatch("snapshot set needs N >= 2");
  if (!snaps.snapshots.allFinite()) throw NonFiniteState("snapshot set has non-finite entries");
  if (snaps.mesh.size != snaps.dim()) throw DimensionMismatch("mesh size != state dimension");
}

std::pair<Vec, Mat> empirical_covariance(const SnapshotSet& snaps) {
  validate_snapshots(snaps);
  const int n = snaps.count();
  Vec mean = snaps.snapshots.rowwise().mean();
  Mat centered = snaps.snapshots.colwise() - mean;
  Mat cov = symmetrize(centered * centered.transpose() / double(n - 1));
  return {std::move(mean), std::move(cov)};
}

namespace {

void apply_sign_convention(Mat& u) {
  for (int j = 0; j < u.cols(); ++j) {
    int arg = 0;
    u.col(j).cwiseAbs().maxCoeff(&arg);
    if (u(arg, j) < 0.0) u.col(j) = -u.col(j);
  }
}

}  // namespace

EigenPairs leading_eigenpairs(const Mat& cov, int r) {
  const int d = int(cov.rows());
  if (r < 1 || r > d) throw DimensionMismatch("leading_eigenpairs: need 1 <= r <= d");
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(cov));
  if (eig.info() != Eigen::Success)
    throw EigDecompFailed("leading_eigenpairs: eigensolver did not converge");
  EigenPairs out;
  out.values = Vec(r);
  out.vectors = Mat(d, r);
  // Eigen returns ascending order; take the top r reversed.
  for (int j = 0; j < r; ++j) {
    out.values(j) = std::max(eig.eigenvalues()(d - 1 - j), 0.0);
    out.vectors.col(j) = eig.eigenvectors().col(d - 1 - j);
  }
  apply_sign_convention(out.vectors);
  return out;
}

std::string to_string(BasisSource s) {
  switch (s) {
    case BasisSource::Pca: return "pca";
    case BasisSource::Gp: return "gp";
    case BasisSource::Gmrf: return "gmrf";
  }
  return "pca";
}

BasisSource basis_source_from_string(const std::string& s) {
  if (s == "pca") return BasisSource::Pca;
  if (s == "gp") return BasisSource::Gp;
  if (s == "gmrf") return BasisSource::Gmrf;
  throw ConfigError("unknown basis source '" + s + "'");
}

SubspaceBasis build_basis(const Vec& lambda, const Mat& u, const Vec& offset,
                          BasisSource source) {
  const int r = int(lambda.size());
  if (u.cols() != r) throw DimensionMismatch("build_basis: lambda/u column mismatch");
  if (offset.size() != u.rows()) throw DimensionMismatch("build_basis: offset dimension");
  SubspaceBasis basis;
  basis.P = Mat(u.rows(), r);
  basis.eigenvalues = lambda;
  basis.source = source;
  basis.offset = offset;
  for (int j = 0; j < r; ++j) {
    if (j > 0 && lambda(j) > lambda(j - 1) + 1e-12 * std::abs(lambda(j - 1)))
      throw DimensionMismatch("build_basis: eigenvalues not descending");
    if (lambda(j) < 0.0) throw DimensionMismatch("build_basis: negative eigenvalue");
    if (lambda(j) == 0.0) ++basis.zero_columns;
    basis.P.col(j) = std::sqrt(lambda(j)) * u.col(j);
  }
  return basis;
}

EnergyCurve cumulative_energy(const Vec& lambda_full) {
  const int d = int(lambda_full.size());
  EnergyCurve out;
  out.fraction = Vec(d);
  const double total = lambda_full.sum();
  if (total <= 0.0) {
    out.fraction.setOnes();
    out.degenerate = true;
    return out;
  }
  double run = 0.0;
  for (int i = 0; i < d; ++i) {
    run += lambda_full(i);
    out.fraction(i) = run / total;
  }
  out.fraction(d - 1) = 1.0;
  return out;
}

double sq_exp_kernel(double dist, const KernelParams& params) {
  const double z = dist / params.length_scale;
  return params.variance * std::exp(-z * z);
}

double sq_exp_kernel(const RingMesh& mesh, int i, int j, const KernelParams& params) {
  return sq_exp_kernel(mesh.distance(i, j), params);
}

Mat sq_exp_kernel_matrix(const RingMesh& mesh, const KernelParams& params,
                         double nugget_rel) {
  const int d = mesh.size;
  Mat k(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) k(i, j) = k(j, i) = sq_exp_kernel(mesh, i, j, params);
  k.diagonal().array() += params.variance * nugget_rel;
  return k;
}

namespace {

constexpr double kGpNugget = 1e-8;

struct GpFitData {
  const SnapshotSet* snaps;
  const GpLogPrior* prior;
  Vec mean;
  Mat scatter;  // sum_i (x_i - mean)(x_i - mean)^T
  int n;
};

// Log-likelihood of N iid snapshots under N(mean, Sigma(theta)) plus the log
// prior, dropped constants omitted. Parameters enter as logs to keep them
// positive.
double gp_objective_impl(const GpFitData& data, const Vec& log_params, Vec* grad) {
  KernelParams params{std::exp(log_params(0)), std::exp(log_params(1))};
  const int d = data.snaps->dim();
  const RingMesh& mesh = data.snaps->mesh;

  Mat sigma = sq_exp_kernel_matrix(mesh, params, kGpNugget);
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();

  const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  Mat sigma_inv_scatter = llt.solve(data.scatter);
  double quad = sigma_inv_scatter.trace();
  double value = -0.5 * data.n * logdet - 0.5 * quad;

  auto add_log_prior = [&](double lp, double mean_lp, double sd, double* g) {
    if (sd <= 0.0) return;
    const double z = (lp - mean_lp) / sd;
    value += -0.5 * z * z;
    if (g) *g += -z / sd;
  };

  if (grad) {
    grad->setZero();
    // dSigma/dtheta1 = Sigma / theta1 (nugget scales with theta1 too).
    // dSigma/dtheta2 = theta1 * exp(-(dist/t2)^2) * 2 dist^2 / t2^3.
    Mat dsigma2(d, d);
    for (int j = 0; j < d; ++j)
      for (int i = j; i < d; ++i) {
        const double dist = mesh.distance(i, j);
        const double z = dist / params.length_scale;
        dsigma2(i, j) = dsigma2(j, i) =
            params.variance * std::exp(-z * z) * 2.0 * z * z / params.length_scale;
      }
    Mat sigma_inv = llt.solve(Mat::Identity(d, d));
    Mat m = llt.solve(sigma_inv_scatter.transpose());  // Sigma^-1 S Sigma^-1

    // d/dtheta: -n/2 tr(Sigma^-1 dSigma) + 1/2 tr(M dSigma); chain rule adds
    // the factor theta for log-parameters.
    const double t1 = -0.5 * data.n * d /* tr(Sigma^-1 Sigma) */ + 0.5 * quad;
    (*grad)(0) = t1;  // dSigma/dtheta1 * theta1 = Sigma
    const double tr_si_d2 = (sigma_inv.array() * dsigma2.array()).sum();
    const double tr_m_d2 = (m.array() * dsigma2.array()).sum();
    (*grad)(1) = (-0.5 * data.n * tr_si_d2 + 0.5 * tr_m_d2) * params.length_scale;
  }

  double g0 = 0.0, g1 = 0.0;
  add_log_prior(log_params(0), data.prior->log_variance_mean, data.prior->log_variance_sd, grad ? &g0 : nullptr);
  add_log_prior(log_params(1), data.prior->log_length_mean, data.prior->log_length_sd, grad ? &g1 : nullptr);
  if (grad) {
    (*grad)(0) += g0;
    (*grad)(1) += g1;
  }
  return value;
}

GpFitData make_gp_fit_data(const SnapshotSet& snaps, const GpLogPrior& prior) {
  validate_snapshots(snaps);
  GpFitData data;
  data.snaps = &snaps;
  data.prior = &prior;
  data.n = snaps.count();
  data.mean = snaps.snapshots.rowwise().mean();
  Mat centered = snaps.snapshots.colwise() - data.mean;
  data.scatter = symmetrize(centered * centered.transpose());
  return data;
}

}  // namespace

double gp_map_objective(const SnapshotSet& snaps, const GpLogPrior& prior,
                        const Vec& log_params, Vec* grad) {
  GpFitData data = make_gp_fit_data(snaps, prior);
  return gp_objective_impl(data, log_params, grad);
}

GpFit gp_map_fit(const SnapshotSet& snaps, const GpLogPrior& prior, KernelParams init,
                 const OptimOptions& options) {
  if (snaps.count() < 2)
    throw OptimFailed("gp_map_fit: need at least 2 snapshots, problem is ill-posed");
  GpFitData data = make_gp_fit_data(snaps, prior);
  if (init.variance <= 0.0 || init.length_scale <= 0.0)
    throw ConfigError("gp_map_fit: init parameters must be positive");

  Vec x0(2);
  x0 << std::log(init.variance), std::log(init.length_scale);
  auto objective = [&](const Vec& x, Vec& g) { return gp_objective_impl(data, x, &g); };
  OptimResult res = lbfgs_maximize(objective, x0, options);
  if (!res.converged) {
    std::ostringstream msg;
    msg << "gp_map_fit did not converge (" << res.message << "); best iterate theta1="
        << std::exp(res.x(0)) << " theta2=" << std::exp(res.x(1)) << " objective="
        << res.value;
    throw OptimFailed(msg.str());
  }
  GpFit fit;
  fit.params = {std::exp(res.x(0)), std::exp(res.x(1))};
  fit.objective = res.value;
  fit.iterations = res.iterations;
  return fit;
}

SubspaceBasis pca_basis(const SnapshotSet& snaps, int r) {
  auto [mean, cov] = empirical_covariance(snaps);
  EigenPairs pairs = leading_eigenpairs(cov, r);
  return build_basis(pairs.values, pairs.vectors, mean, BasisSource::Pca);
}

SubspaceBasis gp_basis(const SnapshotSet& snaps, const KernelParams& params, int r) {
  Vec mean = snaps.snapshots.rowwise().mean();
  Mat sigma = sq_exp_kernel_matrix(snaps.mesh, params);
  EigenPairs pairs = leading_eigenpairs(sigma, r);
  return build_basis(pairs.values, pairs.vectors, mean, BasisSource::Gp);
}

}  // namespace subkal
