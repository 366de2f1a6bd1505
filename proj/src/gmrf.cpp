#include "subkal/gmrf.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "subkal/errors.hpp"
#include "subkal/gaussian.hpp"

namespace subkal {

namespace {

void validate_model(const GmrfModel& m) {
  if (m.alpha_hat < 1 || m.alpha_hat > 4)
    throw AssemblyFailed("gmrf: alpha_hat must be in {1,2,3,4}");
  if (!(m.gamma > 0.0)) throw AssemblyFailed("gmrf: gamma must be positive");
  if (m.nu.size() != m.mesh.nodes) throw DimensionMismatch("gmrf: nu size != nodes");
  if (m.mesh.nodes < 3) throw DimensionMismatch("gmrf: ring needs >= 3 nodes");
}

Vec kappa_from_nu(const Vec& nu) {
  Vec kappa = nu.array().exp();
  if (!kappa.allFinite() || kappa.minCoeff() <= 0.0)
    throw AssemblyFailed("gmrf: kappa = exp(nu) not positive and finite");
  return kappa;
}

}  // namespace

SpMat ring_stiffness(const RingFem& mesh, const Vec& kappa) {
  const int j_nodes = mesh.nodes;
  const double h = mesh.spacing;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(std::size_t(4) * j_nodes);
  for (int e = 0; e < j_nodes; ++e) {
    const int a = e, b = (e + 1) % j_nodes;
    // Element coefficient: integral of the hat-interpolated kappa over the
    // element divided by h^2, i.e. (kappa_a + kappa_b)/2 * (1/h).
    const double c = 0.5 * (kappa(a) + kappa(b)) / h;
    trip.emplace_back(a, a, c);
    trip.emplace_back(b, b, c);
    trip.emplace_back(a, b, -c);
    trip.emplace_back(b, a, -c);
  }
  SpMat k(j_nodes, j_nodes);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

Vec ring_lumped_mass(const RingFem& mesh) {
  return Vec::Constant(mesh.nodes, mesh.spacing);
}

SpMat gmrf_assemble_precision(const GmrfModel& model) {
  validate_model(model);
  const Vec kappa = kappa_from_nu(model.nu);
  SpMat s = ring_stiffness(model.mesh, kappa);
  const Vec delta_l = model.gamma * ring_lumped_mass(model.mesh);
  for (int i = 0; i < model.mesh.nodes; ++i) s.coeffRef(i, i) += delta_l(i);

  SpMat omega = s;
  if (model.alpha_hat > 1) {
    SpMat ls = Vec(delta_l.cwiseInverse()).asDiagonal() * s;
    for (int a = 2; a <= model.alpha_hat; ++a) omega = (omega * ls).pruned();
  }
  return omega;
}

SpMat ring_second_difference_precision(int nodes, double tau) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(std::size_t(3) * nodes);
  SpMat d2(nodes, nodes);
  for (int i = 0; i < nodes; ++i) {
    trip.emplace_back(i, (i + nodes - 1) % nodes, 1.0);
    trip.emplace_back(i, i, -2.0);
    trip.emplace_back(i, (i + 1) % nodes, 1.0);
  }
  d2.setFromTriplets(trip.begin(), trip.end());
  return tau * SpMat(d2.transpose() * d2);
}

GmrfPrior default_gmrf_prior(int nodes, double gamma_rate, double nu_tau) {
  GmrfPrior prior;
  prior.gamma_rate = gamma_rate;
  prior.nu0 = Vec::Zero(nodes);
  prior.omega_nu = ring_second_difference_precision(nodes, nu_tau);
  return prior;
}

double gmrf_logdet(const GmrfModel& model, int dense_limit) {
  validate_model(model);
  const Vec kappa = kappa_from_nu(model.nu);
  SpMat s = ring_stiffness(model.mesh, kappa);
  const Vec delta_l = model.gamma * ring_lumped_mass(model.mesh);
  for (int i = 0; i < model.mesh.nodes; ++i) s.coeffRef(i, i) += delta_l(i);

  double logdet_s;
  if (model.mesh.nodes < dense_limit) {
    Eigen::LLT<Mat> llt{Mat(s)};
    if (llt.info() != Eigen::Success) throw FactorizationFailed("gmrf_logdet: S not SPD");
    logdet_s = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  } else {
    Eigen::SimplicialLLT<SpMat> llt(s);
    if (llt.info() != Eigen::Success) throw FactorizationFailed("gmrf_logdet: S not SPD");
    logdet_s = 2.0 * llt.matrixL().nestedExpression().diagonal().array().log().sum();
  }
  // |Omega| = |S|^alpha |Delta_L|^{-(alpha-1)}
  return model.alpha_hat * logdet_s -
         (model.alpha_hat - 1) * delta_l.array().log().sum();
}

namespace {

// tr(C K^(j)) for the unit-weight stiffness derivative at node j; C need not
// be symmetric.
double trace_with_stiffness_derivative(const Mat& c, int j, int nodes, double h) {
  const int jm = (j + nodes - 1) % nodes;
  const int jp = (j + 1) % nodes;
  const double w = 0.5 / h;
  return w * (c(jm, jm) - c(j, jm) - c(jm, j) + 2.0 * c(j, j) - c(jp, j) - c(j, jp) +
              c(jp, jp));
}

}  // namespace

double gmrf_objective(const SnapshotSet& snaps, int alpha_hat, double gamma,
                      const Vec& nu, const GmrfPrior& prior, double* d_gamma,
                      Vec* d_nu) {
  if (snaps.count() < 1) throw DimensionMismatch("gmrf_objective: no snapshots");
  if (alpha_hat < 1 || alpha_hat > 4)
    throw AssemblyFailed("gmrf_objective: alpha_hat must be in {1,2,3,4}");
  if (nu.size() != snaps.dim()) throw DimensionMismatch("gmrf_objective: nu size");
  // Out-of-range evaluations during a line search are signalled by -inf so the
  // optimizer backtracks instead of aborting.
  Vec kappa;
  if (!(gamma > 0.0) || !std::isfinite(gamma) || !nu.allFinite())
    return -std::numeric_limits<double>::infinity();
  kappa = nu.array().exp();
  if (!kappa.allFinite() || kappa.minCoeff() <= 0.0)
    return -std::numeric_limits<double>::infinity();

  GmrfModel model{alpha_hat, gamma, nu, RingFem{snaps.dim(), snaps.mesh.spacing}};
  const int j_nodes = model.mesh.nodes;
  const double h = model.mesh.spacing;
  const int n = snaps.count();

  const Vec mu = snaps.snapshots.rowwise().mean();
  Mat centered = snaps.snapshots.colwise() - mu;
  Mat scatter = symmetrize(centered * centered.transpose());
  const Vec unit_mass = ring_lumped_mass(model.mesh);
  const Vec delta_l = gamma * unit_mass;
  Mat s = Mat(ring_stiffness(model.mesh, kappa));
  s += Mat(delta_l.asDiagonal());

  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success)
    return -std::numeric_limits<double>::infinity();
  const double logdet_s = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  const double logdet_omega =
      alpha_hat * logdet_s - (alpha_hat - 1) * delta_l.array().log().sum();

  // Factor chain Omega = F_1 F_2 ... F_{2a-1}, odd factors S, even factors
  // Delta_L^{-1}.
  const int n_factors = 2 * alpha_hat - 1;
  const Vec l_diag = delta_l.cwiseInverse();
  std::vector<Mat> prefix(n_factors + 1), suffix(n_factors + 2);
  prefix[0] = Mat::Identity(j_nodes, j_nodes);
  for (int t = 1; t <= n_factors; ++t)
    prefix[t] = (t % 2 == 1) ? Mat(prefix[t - 1] * s)
                             : Mat(prefix[t - 1] * l_diag.asDiagonal());
  const Mat& omega = prefix[n_factors];

  const double quad = (omega.array() * scatter.array()).sum();
  const Vec nu_dev = nu - prior.nu0;
  const Vec omega_nu_dev = prior.omega_nu.size() > 0 ? Vec(prior.omega_nu * nu_dev)
                                                     : Vec(Vec::Zero(j_nodes));
  double value = 0.5 * n * logdet_omega - 0.5 * quad - 0.5 * nu_dev.dot(omega_nu_dev) -
                 prior.gamma_rate * gamma;

  if (!d_gamma && !d_nu) return value;

  suffix[n_factors + 1] = Mat::Identity(j_nodes, j_nodes);
  for (int t = n_factors; t >= 1; --t)
    suffix[t] = (t % 2 == 1) ? Mat(s * suffix[t + 1])
                             : Mat(l_diag.asDiagonal() * suffix[t + 1]);

  Mat s_inv = llt.solve(Mat::Identity(j_nodes, j_nodes));

  double grad_gamma = 0.0;
  Vec grad_nu = Vec::Zero(j_nodes);

  // Log-determinant part: d/dgamma = alpha tr(S^-1 D) - (alpha-1) J / gamma.
  grad_gamma += 0.5 * n *
                (alpha_hat * s_inv.diagonal().dot(unit_mass) -
                 double(j_nodes) * (alpha_hat - 1) / gamma);
  for (int j = 0; j < j_nodes; ++j)
    grad_nu(j) += 0.5 * n * alpha_hat * kappa(j) *
                  trace_with_stiffness_derivative(s_inv, j, j_nodes, h);

  // Quadratic part: -1/2 sum_t tr(C_t dF_t) with C_t = suffix_{t+1} W prefix_{t-1}.
  for (int t = 1; t <= n_factors; ++t) {
    Mat c_t = suffix[t + 1] * scatter * prefix[t - 1];
    if (t % 2 == 1) {
      grad_gamma += -0.5 * c_t.diagonal().dot(unit_mass);
      for (int j = 0; j < j_nodes; ++j)
        grad_nu(j) += -0.5 * kappa(j) * trace_with_stiffness_derivative(c_t, j, j_nodes, h);
    } else {
      grad_gamma += 0.5 / gamma * c_t.diagonal().dot(l_diag);
    }
  }

  // Priors.
  grad_nu -= omega_nu_dev;
  grad_gamma -= prior.gamma_rate;

  if (d_gamma) *d_gamma = grad_gamma;
  if (d_nu) *d_nu = grad_nu;
  return value;
}

GmrfFit gmrf_map_fit(const SnapshotSet& snaps, int alpha_hat, const GmrfPrior& prior,
                     const OptimOptions& options) {
  if (snaps.count() < 1) throw OptimFailed("gmrf_map_fit: no snapshots");
  const int j_nodes = snaps.dim();
  if (prior.nu0.size() != j_nodes) throw DimensionMismatch("gmrf_map_fit: nu0 size");

  Vec x0(j_nodes + 1);
  x0(0) = 0.0;  // log gamma
  x0.tail(j_nodes) = prior.nu0;

  auto objective = [&](const Vec& x, Vec& g) {
    const double gamma = std::exp(x(0));
    double d_gamma = 0.0;
    Vec d_nu(j_nodes);
    const double value =
        gmrf_objective(snaps, alpha_hat, gamma, x.tail(j_nodes), prior, &d_gamma, &d_nu);
    g.resize(j_nodes + 1);
    g(0) = d_gamma * gamma;
    g.tail(j_nodes) = d_nu;
    return value;
  };

  OptimResult res = lbfgs_maximize(objective, x0, options);
  if (!res.converged) {
    std::ostringstream msg;
    msg << "gmrf_map_fit did not converge (" << res.message << "); best gamma="
        << std::exp(res.x(0)) << " objective=" << res.value;
    throw OptimFailed(msg.str());
  }
  GmrfFit fit;
  fit.model = GmrfModel{alpha_hat, std::exp(res.x(0)), res.x.tail(j_nodes),
                        RingFem{j_nodes, snaps.mesh.spacing}};
  fit.objective = res.value;
  fit.iterations = res.iterations;
  return fit;
}

SubspaceBasis basis_from_precision(const GmrfModel& model, int r, const Vec& offset) {
  validate_model(model);
  Mat omega = Mat(gmrf_assemble_precision(model));
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(omega));
  if (eig.info() != Eigen::Success)
    throw EigDecompFailed("basis_from_precision: eigensolver did not converge");
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw FactorizationFailed("basis_from_precision: precision not SPD");
  const int j_nodes = model.mesh.nodes;
  if (r < 1 || r > j_nodes) throw DimensionMismatch("basis_from_precision: bad r");

  // Smallest precision eigenvalues = leading covariance eigenvalues.
  Vec lambda(r);
  Mat u(j_nodes, r);
  for (int j = 0; j < r; ++j) {
    lambda(j) = 1.0 / eig.eigenvalues()(j);
    u.col(j) = eig.eigenvectors().col(j);
  }
  for (int j = 0; j < r; ++j) {
    int arg = 0;
    u.col(j).cwiseAbs().maxCoeff(&arg);
    if (u(arg, j) < 0.0) u.col(j) = -u.col(j);
  }
  return build_basis(lambda, u, offset, BasisSource::Gmrf);
}

}  // namespace subkal
