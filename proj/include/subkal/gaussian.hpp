#pragma once

#include <cstdint>
#include <memory>

#include "subkal/rng.hpp"
#include "subkal/types.hpp"

namespace subkal {

// Gaussian distribution over subspace coordinates (reduced filters) or over
// the full state (full-space filters).
struct GaussianBelief {
  Vec mean;
  Mat cov;
};

// Returns (cov + cov^T)/2; every covariance update passes through this so the
// stored matrix stays symmetric in floating point.
Mat symmetrize(const Mat& m);

// Checks the belief invariants: cov symmetric to 1e-12 relative and all
// eigenvalues >= -1e-10 * trace / r. Throws FactorizationFailed otherwise.
void validate_belief(const GaussianBelief& belief);

// Lower-triangular factor A with A A^T = psi + jitter I.
struct CovarianceFactor {
  Mat factor;
  double jitter = 0.0;
};

// Relative jitter ladder tried in order; values scale with trace(psi)/r.
struct JitterPolicy {
  static constexpr double kLadder[] = {0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6};
};

// Cholesky factorization with escalating jitter for near-singular matrices.
// An exactly-zero psi yields a zero factor. Throws FactorizationFailed when
// psi stays indefinite past the largest jitter.
CovarianceFactor cholesky_factor(const Mat& psi, const JitterPolicy& policy = {});

// SPD operator with cheap apply / solve / logdet. Backed by either a diagonal
// or a dense matrix (with a cached Cholesky factorization).
class SpdOperator {
 public:
  SpdOperator() = default;
  static SpdOperator diagonal(Vec diag);
  static SpdOperator scaled_identity(int n, double scale);
  static SpdOperator dense(Mat m);

  int dim() const { return dim_; }
  bool is_diagonal() const { return dense_.size() == 0; }
  const Vec& diag() const { return diag_; }

  Vec apply(const Vec& v) const;
  Mat apply(const Mat& m) const;
  Vec solve(const Vec& v) const;
  Mat solve(const Mat& m) const;
  double logdet() const { return logdet_; }

  // m += Q (dense assembly for the full-space filters).
  void add_to(Mat& m) const;

  // n columns ~ N(0, Q); draw j uses rng indices [base + j*dim, ...).
  Mat sample(const CounterRng& rng, std::uint64_t index_base, int n) const;

 private:
  int dim_ = 0;
  Vec diag_;                            // set when diagonal
  Mat dense_;                           // set when dense
  std::shared_ptr<Eigen::LLT<Mat>> llt_;  // factor of dense_
  double logdet_ = 0.0;
};

// Covariance of the form B B^T + Q with Q cheaply invertible. Houses the
// forecast covariance of the reduced filters: B has r columns in the
// Kalman/EKF variants and N_ens columns in the ensemble variant.
struct LowRankPlusEasy {
  Mat low_rank;     // B, d x p (p may be zero)
  SpdOperator easy;  // Q
};

// Applies (B B^T + Q)^{-1} via Q^{-1}v - Q^{-1}B (B^T Q^{-1} B + I)^{-1} B^T Q^{-1} v.
// The p x p inner matrix is factorized once at construction; each apply costs
// one triangular solve of that factor.
class SmwSolver {
 public:
  explicit SmwSolver(const LowRankPlusEasy& cov);

  Vec apply(const Vec& v) const;
  // Column-batched apply, parallelized over columns.
  Mat apply_batch(const Mat& v) const;

 private:
  const LowRankPlusEasy& cov_;
  Mat q_inv_b_;           // Q^{-1} B
  Eigen::LLT<Mat> inner_;  // B^T Q^{-1} B + I
};

Vec smw_apply(const LowRankPlusEasy& cov, const Vec& v);
Mat smw_apply(const LowRankPlusEasy& cov, const Mat& v);

// Columns are mean + A z with z standard normal from a counter-seeded
// generator; bit-identical for identical (mean, factor, n, seed).
Mat sample_gaussian(const Vec& mean, const CovarianceFactor& factor, int n,
                    std::uint64_t seed);

// Dense SPD inverse via Cholesky with the jitter ladder; used for the r x r
// posterior covariance assembly.
Mat spd_inverse(const Mat& m);

}  // namespace subkal
