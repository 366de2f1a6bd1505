#include "subkal/linear_ssm.hpp"

#include <cmath>

#include "subkal/errors.hpp"
#include "subkal/rng.hpp"

namespace subkal {

void LinearSSMConfig::validate() const {
  const int d = state_dim(), m = obs_dim();
  if (m_matrix.cols() != d) throw DimensionMismatch("linear ssm: M not square");
  if (h_matrix.cols() != d) throw DimensionMismatch("linear ssm: H columns != d");
  if (q.rows() != d || q.cols() != d) throw DimensionMismatch("linear ssm: Q shape");
  if (r.rows() != m || r.cols() != m) throw DimensionMismatch("linear ssm: R shape");
}

namespace {

SpdOperator make_spd(const Mat& m) {
  // Store diagonal matrices as diagonal operators.
  if (m.isDiagonal(0.0)) return SpdOperator::diagonal(m.diagonal());
  return SpdOperator::dense(m);
}

}  // namespace

LinearModelOps linear_ssm_ops(const LinearSSMConfig& cfg,
                              std::shared_ptr<ApplyCounters> counters) {
  cfg.validate();
  LinearModelOps ops;
  ops.state_dim = cfg.state_dim();
  ops.obs_dim = cfg.obs_dim();
  ops.q = make_spd(cfg.q);
  ops.r_cov = make_spd(cfg.r);
  ops.counters = counters ? counters : std::make_shared<ApplyCounters>();
  const Mat m_matrix = cfg.m_matrix;
  const Mat h_matrix = cfg.h_matrix;
  auto cnt = ops.counters;
  ops.evolve_apply = [m_matrix, cnt](const Vec& v) {
    ++cnt->evolve;
    return Vec(m_matrix * v);
  };
  ops.obs_apply = [h_matrix, cnt](const Vec& v) {
    ++cnt->observe;
    return Vec(h_matrix * v);
  };
  return ops;
}

NonlinearModelOps linear_ssm_nonlinear_ops(const LinearSSMConfig& cfg,
                                           std::shared_ptr<ApplyCounters> counters) {
  cfg.validate();
  NonlinearModelOps ops;
  ops.state_dim = cfg.state_dim();
  ops.obs_dim = cfg.obs_dim();
  ops.q = make_spd(cfg.q);
  ops.r_cov = make_spd(cfg.r);
  ops.observe_is_linear = true;
  ops.counters = counters ? counters : std::make_shared<ApplyCounters>();
  const Mat m_matrix = cfg.m_matrix;
  const Mat h_matrix = cfg.h_matrix;
  auto cnt = ops.counters;
  ops.evolve = [m_matrix, cnt](const Vec& x) {
    ++cnt->evolve;
    return Vec(m_matrix * x);
  };
  ops.observe = [h_matrix, cnt](const Vec& x) {
    ++cnt->observe;
    return Vec(h_matrix * x);
  };
  ops.tangent_evolve = [m_matrix, cnt](const Vec&, const Vec& v) {
    ++cnt->tangent_evolve;
    return Vec(m_matrix * v);
  };
  ops.tangent_observe = [h_matrix, cnt](const Vec&, const Vec& v) {
    ++cnt->tangent_observe;
    return Vec(h_matrix * v);
  };
  return ops;
}

LinearSSMConfig random_linear_ssm(int d, int m, std::uint64_t seed,
                                  double spectral_radius, double q_scale,
                                  double r_scale) {
  CounterRng rng(seed);
  LinearSSMConfig cfg;
  cfg.m_matrix = Mat(d, d);
  std::uint64_t idx = 0;
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) cfg.m_matrix(i, j) = rng.normal(idx++) / std::sqrt(double(d));
  const double rho = cfg.m_matrix.eigenvalues().cwiseAbs().maxCoeff();
  if (rho > 0.0) cfg.m_matrix *= spectral_radius / rho;
  cfg.h_matrix = Mat(m, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < m; ++i) cfg.h_matrix(i, j) = rng.normal(idx++);
  cfg.q = q_scale * Mat::Identity(d, d);
  cfg.r = r_scale * Mat::Identity(m, m);
  return cfg;
}

}  // namespace subkal
