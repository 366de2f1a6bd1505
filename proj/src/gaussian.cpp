#include "subkal/gaussian.hpp"

#include <cmath>
#include <sstream>

#include "subkal/errors.hpp"

namespace subkal {

constexpr double JitterPolicy::kLadder[];

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

void validate_belief(const GaussianBelief& belief) {
  const auto r = belief.cov.rows();
  if (belief.cov.cols() != r || belief.mean.size() != r)
    throw DimensionMismatch("belief mean/cov dimensions disagree");
  const double scale = std::max(belief.cov.norm(), 1e-300);
  if ((belief.cov - belief.cov.transpose()).norm() > 1e-12 * scale)
    throw FactorizationFailed("belief covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(belief.cov));
  if (eig.info() != Eigen::Success) throw EigDecompFailed("belief eigensolve failed");
  const double floor = -1e-10 * std::max(belief.cov.trace(), 0.0) / double(r);
  if (eig.eigenvalues().minCoeff() < floor)
    throw FactorizationFailed("belief covariance is indefinite");
}

CovarianceFactor cholesky_factor(const Mat& psi, const JitterPolicy&) {
  const auto r = psi.rows();
  if (r < 1 || psi.cols() != r) throw DimensionMismatch("cholesky_factor: matrix not square");
  const double scale = std::max(psi.norm(), 1.0);
  if ((psi - psi.transpose()).norm() > 1e-10 * scale)
    throw FactorizationFailed("cholesky_factor: matrix not symmetric");
  if (psi.isZero(0.0)) return {Mat::Zero(r, r), 0.0};

  const double trace = psi.trace();
  if (!(trace > 0.0))
    throw FactorizationFailed("cholesky_factor: nonpositive trace, matrix indefinite");
  const double unit = trace / double(r);

  Eigen::LLT<Mat> llt;
  for (double rel : JitterPolicy::kLadder) {
    const double eps = rel * unit;
    Mat shifted = psi;
    if (eps > 0.0) shifted.diagonal().array() += eps;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) return {Mat(llt.matrixL()), eps};
  }
  std::ostringstream msg;
  msg << "cholesky_factor: indefinite beyond max jitter (trace " << trace << ")";
  throw FactorizationFailed(msg.str());
}

SpdOperator SpdOperator::diagonal(Vec diag) {
  if (diag.size() > 0 && diag.minCoeff() <= 0.0)
    throw FactorizationFailed("SpdOperator::diagonal: nonpositive entry");
  SpdOperator op;
  op.dim_ = int(diag.size());
  op.logdet_ = diag.array().log().sum();
  op.diag_ = std::move(diag);
  return op;
}

SpdOperator SpdOperator::scaled_identity(int n, double scale) {
  return diagonal(Vec::Constant(n, scale));
}

SpdOperator SpdOperator::dense(Mat m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("SpdOperator::dense: not square");
  SpdOperator op;
  op.dim_ = int(m.rows());
  op.llt_ = std::make_shared<Eigen::LLT<Mat>>(symmetrize(m));
  if (op.llt_->info() != Eigen::Success)
    throw FactorizationFailed("SpdOperator::dense: matrix not SPD");
  op.logdet_ = 2.0 * Mat(op.llt_->matrixL()).diagonal().array().log().sum();
  op.dense_ = std::move(m);
  return op;
}

Vec SpdOperator::apply(const Vec& v) const {
  if (v.size() != dim_) throw DimensionMismatch("SpdOperator::apply");
  return is_diagonal() ? Vec(diag_.cwiseProduct(v)) : Vec(dense_ * v);
}

Mat SpdOperator::apply(const Mat& m) const {
  if (m.rows() != dim_) throw DimensionMismatch("SpdOperator::apply");
  return is_diagonal() ? Mat(diag_.asDiagonal() * m) : Mat(dense_ * m);
}

Vec SpdOperator::solve(const Vec& v) const {
  if (v.size() != dim_) throw DimensionMismatch("SpdOperator::solve");
  return is_diagonal() ? Vec(v.cwiseQuotient(diag_)) : Vec(llt_->solve(v));
}

Mat SpdOperator::solve(const Mat& m) const {
  if (m.rows() != dim_) throw DimensionMismatch("SpdOperator::solve");
  return is_diagonal() ? Mat(diag_.cwiseInverse().asDiagonal() * m) : Mat(llt_->solve(m));
}

void SpdOperator::add_to(Mat& m) const {
  if (m.rows() != dim_ || m.cols() != dim_) throw DimensionMismatch("SpdOperator::add_to");
  if (is_diagonal())
    m.diagonal() += diag_;
  else
    m += dense_;
}

Mat SpdOperator::sample(const CounterRng& rng, std::uint64_t index_base, int n) const {
  Mat z(dim_, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < dim_; ++i)
      z(i, j) = rng.normal(index_base + std::uint64_t(j) * dim_ + i);
  if (is_diagonal()) return diag_.cwiseSqrt().asDiagonal() * z;
  return Mat(llt_->matrixL()) * z;
}

SmwSolver::SmwSolver(const LowRankPlusEasy& cov) : cov_(cov) {
  const auto p = cov.low_rank.cols();
  if (p > 0) {
    if (cov.low_rank.rows() != cov.easy.dim())
      throw DimensionMismatch("SmwSolver: B rows != dim(Q)");
    q_inv_b_ = cov.easy.solve(cov.low_rank);
    Mat inner = cov.low_rank.transpose() * q_inv_b_;
    inner.diagonal().array() += 1.0;
    inner_.compute(symmetrize(inner));
    if (inner_.info() != Eigen::Success)
      throw InnerSolveFailed("SmwSolver: inner p x p system not SPD");
  }
}

Vec SmwSolver::apply(const Vec& v) const {
  Vec qiv = cov_.easy.solve(v);
  if (cov_.low_rank.cols() == 0) return qiv;
  Vec w = cov_.low_rank.transpose() * qiv;
  return qiv - q_inv_b_ * inner_.solve(w);
}

Mat SmwSolver::apply_batch(const Mat& v) const {
  Mat out(v.rows(), v.cols());
  const int cols = int(v.cols());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < cols; ++j) out.col(j) = apply(v.col(j));
  return out;
}

Vec smw_apply(const LowRankPlusEasy& cov, const Vec& v) { return SmwSolver(cov).apply(v); }

Mat smw_apply(const LowRankPlusEasy& cov, const Mat& v) {
  return SmwSolver(cov).apply_batch(v);
}

Mat sample_gaussian(const Vec& mean, const CovarianceFactor& factor, int n,
                    std::uint64_t seed) {
  const int r = int(mean.size());
  if (n < 1) throw DimensionMismatch("sample_gaussian: n must be >= 1");
  if (factor.factor.rows() != r) throw DimensionMismatch("sample_gaussian: factor/mean");
  CounterRng rng(seed);
  Mat out(r, n);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    Vec z(r);
    for (int i = 0; i < r; ++i) z(i) = rng.normal(std::uint64_t(j) * r + i);
    out.col(j) = mean + factor.factor * z;
  }
  return out;
}

Mat spd_inverse(const Mat& m) {
  const CovarianceFactor f = cholesky_factor(m);
  Mat inv = Mat::Identity(m.rows(), m.rows());
  f.factor.triangularView<Eigen::Lower>().solveInPlace(inv);
  f.factor.triangularView<Eigen::Lower>().adjoint().solveInPlace(inv);
  return symmetrize(inv);
}

}  // namespace subkal
