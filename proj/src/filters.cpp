#include "subkal/filters.hpp"

#include <cmath>

#include "subkal/errors.hpp"
#include "subkal/rng.hpp"

namespace subkal {

namespace {

Mat apply_columns(const ApplyFn& f, const Mat& in, int out_rows) {
  Mat out(out_rows, in.cols());
  const int cols = int(in.cols());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < cols; ++j) out.col(j) = f(in.col(j));
  return out;
}

Mat apply_tangent_columns(const TangentFn& f, const Vec& at, const Mat& in, int out_rows) {
  Mat out(out_rows, in.cols());
  const int cols = int(in.cols());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < cols; ++j) out.col(j) = f(at, in.col(j));
  return out;
}

struct ReducedUpdate {
  Mat psi_a;
  Vec alpha_a;
};

// Shared analysis update: Psi^a = (HP' R^-1 HP + prior_precision)^-1,
// alpha^a = Psi^a (HP)' R^-1 residual.
ReducedUpdate reduced_update(const Mat& hp, const SpdOperator& r_cov,
                             const Mat& prior_precision, const Vec& residual) {
  Mat rinv_hp = r_cov.solve(hp);
  Mat g = symmetrize(hp.transpose() * rinv_hp + prior_precision);
  ReducedUpdate up;
  up.psi_a = spd_inverse(g);
  up.alpha_a = up.psi_a * (rinv_hp.transpose() * residual);
  return up;
}

void check_reduced_dims(const FilterState& state, int state_dim, int obs_dim,
                        const SubspaceBasis& basis, const Vec& y) {
  if (basis.dim() != state_dim) throw DimensionMismatch("basis dimension != state dimension");
  if (int(state.belief.mean.size()) != basis.rank())
    throw DimensionMismatch("belief dimension != basis rank");
  if (int(y.size()) != obs_dim) throw DimensionMismatch("observation dimension mismatch");
  if (int(state.prior_mean_full.size()) != state_dim)
    throw DimensionMismatch("forecast mean dimension mismatch");
}

const Vec& parameterization_center(const FilterState& state, const SubspaceBasis& basis,
                                   ParamMode mode) {
  if (mode == ParamMode::PriorMeanCentered) return state.prior_mean_full;
  if (basis.offset.size() != basis.P.rows())
    throw DimensionMismatch("fixed-offset mode requires a basis offset");
  return basis.offset;
}

}  // namespace

FilterState initial_reduced_state(int r, const Vec& x0) {
  FilterState st;
  st.belief.mean = Vec::Zero(r);
  st.belief.cov = Mat::Identity(r, r);
  st.prior_mean_full = x0;
  return st;
}

FilterState initial_full_state(const Vec& x0, const Mat& c0) {
  FilterState st;
  st.belief.mean = x0;
  st.belief.cov = c0;
  st.prior_mean_full = x0;
  return st;
}

GaussianBelief static_reduced_posterior(const ApplyFn& f_apply, const SpdOperator& r_cov,
                                        const Vec& mu, const SubspaceBasis& basis,
                                        const Vec& y) {
  const int m = r_cov.dim();
  Mat fp = apply_columns(f_apply, basis.P, m);
  Mat rinv_fp = r_cov.solve(fp);
  Mat g = symmetrize(fp.transpose() * rinv_fp);
  g.diagonal().array() += 1.0;
  GaussianBelief post;
  post.cov = spd_inverse(g);
  Vec residual = y - f_apply(mu);
  post.mean = post.cov * (rinv_fp.transpose() * residual);
  return post;
}

FilterState kf_step(const FilterState& state, const LinearModelOps& model, const Vec& y) {
  const int d = model.state_dim, m = model.obs_dim;
  if (int(state.belief.mean.size()) != d) throw DimensionMismatch("kf_step: belief dim");
  if (int(y.size()) != m) throw DimensionMismatch("kf_step: observation dim");

  // Predict.
  Vec x_f = model.evolve_apply(state.belief.mean);
  Mat mc = apply_columns(model.evolve_apply, state.belief.cov, d);
  Mat c_f = symmetrize(apply_columns(model.evolve_apply, mc.transpose(), d));
  model.q.add_to(c_f);

  // Update.
  Mat hc = apply_columns(model.obs_apply, c_f, m);  // H C
  Mat cht = hc.transpose();                         // C H'
  Mat innov = symmetrize(apply_columns(model.obs_apply, cht, m));
  model.r_cov.add_to(innov);
  Eigen::LLT<Mat> llt(innov);
  if (llt.info() != Eigen::Success)
    throw SolveFailed("kf_step: innovation covariance is singular");

  Vec residual = y - model.obs_apply(x_f);
  FilterState out;
  out.belief.mean = x_f + cht * llt.solve(residual);
  out.belief.cov = symmetrize(c_f - cht * llt.solve(hc));
  out.prior_mean_full = x_f;
  out.step_index = state.step_index + 1;
  return out;
}

FilterState reduced_kf_step(const FilterState& state, const LinearModelOps& model,
                            const SubspaceBasis& basis, const Vec& y, ParamMode mode) {
  const int d = model.state_dim, m = model.obs_dim;
  check_reduced_dims(state, d, m, basis, y);

  const Vec& center_prev = parameterization_center(state, basis, mode);
  Vec x_prev_analysis = center_prev + basis.P * state.belief.mean;
  Vec x_f = model.evolve_apply(x_prev_analysis);

  CovarianceFactor a = cholesky_factor(state.belief.cov);
  Mat pa = basis.P * a.factor;
  Mat b = apply_columns(model.evolve_apply, pa, d);

  LowRankPlusEasy c_f{std::move(b), model.q};
  Mat cinv_p = smw_apply(c_f, basis.P);
  Mat prior_precision = symmetrize(basis.P.transpose() * cinv_p);

  Mat hp = apply_columns(model.obs_apply, basis.P, m);
  const Vec& obs_center = (mode == ParamMode::PriorMeanCentered) ? x_f : basis.offset;
  Vec residual = y - model.obs_apply(obs_center);

  ReducedUpdate up = reduced_update(hp, model.r_cov, prior_precision, residual);
  FilterState out;
  out.belief = {std::move(up.alpha_a), std::move(up.psi_a)};
  out.prior_mean_full = std::move(x_f);
  out.step_index = state.step_index + 1;
  return out;
}

FilterState reduced_ekf_step(const FilterState& state, const NonlinearModelOps& model,
                             const SubspaceBasis& basis, const Vec& y, ParamMode mode) {
  const int d = model.state_dim, m = model.obs_dim;
  check_reduced_dims(state, d, m, basis, y);

  const Vec& center_prev = parameterization_center(state, basis, mode);
  Vec x_prev_analysis = center_prev + basis.P * state.belief.mean;
  Vec x_f = model.evolve(x_prev_analysis);

  CovarianceFactor a = cholesky_factor(state.belief.cov);
  Mat pa = basis.P * a.factor;
  // Tangent of the evolution at the previous analysis mean.
  Mat b = apply_tangent_columns(model.tangent_evolve, x_prev_analysis, pa, d);

  LowRankPlusEasy c_f{std::move(b), model.q};
  Mat cinv_p = smw_apply(c_f, basis.P);
  Mat prior_precision = symmetrize(basis.P.transpose() * cinv_p);

  // Tangent of the observation at the forecast mean; residual with the
  // nonlinear observation model.
  Mat hp = apply_tangent_columns(model.tangent_observe, x_f, basis.P, m);
  const Vec& obs_center = (mode == ParamMode::PriorMeanCentered) ? x_f : basis.offset;
  Vec residual = y - model.observe(obs_center);

  ReducedUpdate up = reduced_update(hp, model.r_cov, prior_precision, residual);
  FilterState out;
  out.belief = {std::move(up.alpha_a), std::move(up.psi_a)};
  out.prior_mean_full = std::move(x_f);
  out.step_index = state.step_index + 1;
  return out;
}

FilterState ekf_step(const FilterState& state, const NonlinearModelOps& model,
                     const Vec& y) {
  const int d = model.state_dim, m = model.obs_dim;
  if (int(state.belief.mean.size()) != d) throw DimensionMismatch("ekf_step: belief dim");

  const Vec& x_a = state.belief.mean;
  Vec x_f = model.evolve(x_a);
  Mat m_jac = apply_tangent_columns(model.tangent_evolve, x_a, Mat::Identity(d, d), d);
  Mat c_f = symmetrize(m_jac * state.belief.cov * m_jac.transpose());
  model.q.add_to(c_f);

  Mat h_jac = apply_tangent_columns(model.tangent_observe, x_f, Mat::Identity(d, d), m);
  Mat cht = c_f * h_jac.transpose();
  Mat innov = symmetrize(h_jac * cht);
  model.r_cov.add_to(innov);
  Eigen::LLT<Mat> llt(innov);
  if (llt.info() != Eigen::Success)
    throw SolveFailed("ekf_step: innovation covariance is singular");

  Vec residual = y - model.observe(x_f);
  FilterState out;
  out.belief.mean = x_f + cht * llt.solve(residual);
  out.belief.cov = symmetrize(c_f - cht * llt.solve(cht.transpose()));
  out.prior_mean_full = x_f;
  out.step_index = state.step_index + 1;
  return out;
}

FilterState reduced_enkf_step(const FilterState& state, const NonlinearModelOps& model,
                              const SubspaceBasis& basis, const Vec& y, int n_ens,
                              std::uint64_t seed, ParamMode mode) {
  const int d = model.state_dim, m = model.obs_dim;
  check_reduced_dims(state, d, m, basis, y);
  if (n_ens < 0) throw DimensionMismatch("reduced_enkf_step: n_ens must be >= 0");
  if (!model.observe_is_linear)
    throw ConfigError("reduced_enkf_step requires a linear observation operator");

  const Vec& center_prev = parameterization_center(state, basis, mode);
  Vec x_prev_analysis = center_prev + basis.P * state.belief.mean;
  Vec x_f = model.evolve(x_prev_analysis);

  Mat x_scaled(d, n_ens);
  if (n_ens > 0) {
    CovarianceFactor a = cholesky_factor(state.belief.cov);
    Mat alphas = sample_gaussian(state.belief.mean, a, n_ens, seed);
    Mat members_prev = (basis.P * alphas).colwise() + center_prev;
    Mat members_f = apply_columns(model.evolve, members_prev, d);
    x_scaled = (members_f.colwise() - x_f) / std::sqrt(double(n_ens));
  }

  LowRankPlusEasy c_f{std::move(x_scaled), model.q};
  Mat cinv_p = smw_apply(c_f, basis.P);
  Mat prior_precision = symmetrize(basis.P.transpose() * cinv_p);

  Mat hp = apply_columns(model.observe, basis.P, m);
  const Vec& obs_center = (mode == ParamMode::PriorMeanCentered) ? x_f : basis.offset;
  Vec residual = y - model.observe(obs_center);

  ReducedUpdate up = reduced_update(hp, model.r_cov, prior_precision, residual);
  FilterState out;
  out.belief = {std::move(up.alpha_a), std::move(up.psi_a)};
  out.prior_mean_full = std::move(x_f);
  out.step_index = state.step_index + 1;
  return out;
}

double gaspari_cohn(double dist, double c) {
  if (!(c > 0.0)) throw ConfigError("gaspari_cohn: cutoff must be positive");
  const double z = std::abs(dist) / c;
  if (z >= 2.0) return 0.0;
  if (z <= 1.0)
    return 1.0 + z * z * (-5.0 / 3.0 + z * (0.625 + z * (0.5 - 0.25 * z)));
  return 4.0 - 5.0 * z + z * z * (5.0 / 3.0 + z * (0.625 + z * (-0.5 + z / 12.0))) -
         2.0 / (3.0 * z);
}

LocalizationTaper gaspari_cohn_taper(const RingMesh& mesh, double cutoff) {
  const int d = mesh.size;
  LocalizationTaper taper;
  taper.weights = Mat(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i)
      taper.weights(i, j) = taper.weights(j, i) = gaspari_cohn(mesh.distance(i, j), cutoff);
  return taper;
}

FilterState enkf_step(const FilterState& state, const NonlinearModelOps& model,
                      const Vec& y, int n_ens, std::uint64_t seed,
                      const LocalizationTaper* taper) {
  const int d = model.state_dim, m = model.obs_dim;
  if (n_ens < 2) throw DimensionMismatch("enkf_step: n_ens must be >= 2");
  if (!model.observe_is_linear)
    throw ConfigError("enkf_step requires a linear observation operator");

  Mat members = state.ensemble;
  if (members.size() == 0) {
    CovarianceFactor a = cholesky_factor(state.belief.cov);
    members = sample_gaussian(state.belief.mean, a, n_ens, derive_seed(seed, 0, 17));
  }
  if (int(members.cols()) != n_ens || int(members.rows()) != d)
    throw DimensionMismatch("enkf_step: ensemble shape mismatch");

  Mat fwd = apply_columns(model.evolve, members, d);
  Vec mean_f = fwd.rowwise().mean();

  // Forecast covariance for the gain: tapered sample covariance plus exact Q.
  Mat xc = (fwd.colwise() - mean_f) / std::sqrt(double(n_ens - 1));
  Mat s = xc * xc.transpose();
  if (taper) {
    if (taper->weights.rows() != d) throw DimensionMismatch("enkf_step: taper size");
    s.array() *= taper->weights.array();
  }
  s = symmetrize(s);
  model.q.add_to(s);

  // Model-noise perturbations keep the analysis spread consistent with Q.
  CounterRng rng_q(derive_seed(seed, 1, 17));
  fwd += model.q.sample(rng_q, 0, n_ens);

  Mat hs = apply_columns(model.observe, s, m);    // H C^f
  Mat sht = hs.transpose();                       // C^f H'
  Mat innov = symmetrize(apply_columns(model.observe, sht, m));
  model.r_cov.add_to(innov);
  Eigen::LLT<Mat> llt(innov);
  if (llt.info() != Eigen::Success)
    throw SolveFailed("enkf_step: innovation covariance is singular");

  // Perturbed-observation update, one gain for all members.
  CounterRng rng_r(derive_seed(seed, 2, 17));
  Mat obs_pert = model.r_cov.sample(rng_r, 0, n_ens);
  Mat hx = apply_columns(model.observe, fwd, m);
  Mat u = (obs_pert - hx).colwise() + y;
  Mat analysis = fwd + sht * llt.solve(u);
  if (!analysis.allFinite()) throw NonFiniteState("enkf_step: analysis ensemble not finite");

  Vec mean_a = analysis.rowwise().mean();
  Mat ac = (analysis.colwise() - mean_a) / std::sqrt(double(n_ens - 1));

  FilterState out;
  out.belief.mean = std::move(mean_a);
  out.belief.cov = symmetrize(ac * ac.transpose());
  out.prior_mean_full = std::move(mean_f);
  out.ensemble = std::move(analysis);
  out.step_index = state.step_index + 1;
  return out;
}

FilterState rokf_step(const FilterState& state, const LinearModelOps& model,
                      const SubspaceBasis& basis, const Vec& y) {
  const int d = model.state_dim, m = model.obs_dim;
  check_reduced_dims(state, d, m, basis, y);

  Vec x_prev_analysis = state.prior_mean_full + basis.P * state.belief.mean;
  Vec x_f = model.evolve_apply(x_prev_analysis);

  CovarianceFactor a = cholesky_factor(state.belief.cov);
  Mat pa = basis.P * a.factor;
  Mat b = apply_columns(model.evolve_apply, pa, d);

  // Marginal projection: Psi^f = P' C^f P = (P'B)(P'B)' + P' Q P.
  Mat pb = basis.P.transpose() * b;
  Mat pqp = basis.P.transpose() * model.q.apply(basis.P);
  Mat psi_f = symmetrize(pb * pb.transpose() + pqp);
  Mat prior_precision = spd_inverse(psi_f);

  Mat hp = apply_columns(model.obs_apply, basis.P, m);
  Vec residual = y - model.obs_apply(x_f);

  ReducedUpdate up = reduced_update(hp, model.r_cov, prior_precision, residual);
  FilterState out;
  out.belief = {std::move(up.alpha_a), std::move(up.psi_a)};
  out.prior_mean_full = std::move(x_f);
  out.step_index = state.step_index + 1;
  return out;
}

Vec reconstruct_state(const FilterState& state, const SubspaceBasis& basis,
                      ParamMode mode) {
  const Vec& center = parameterization_center(state, basis, mode);
  return center + basis.P * state.belief.mean;
}

}  // namespace subkal
