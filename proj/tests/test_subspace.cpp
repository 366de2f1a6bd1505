#include <cmath>

#include "doctest.h"
#include "subkal/errors.hpp"
#include "subkal/gaussian.hpp"
#include "subkal/rng.hpp"
#include "subkal/subspace.hpp"

using namespace subkal;

namespace {

SnapshotSet make_snaps(const Mat& columns) {
  SnapshotSet s;
  s.snapshots = columns;
  s.mesh = RingMesh{int(columns.rows()), 1.0};
  return s;
}

Mat random_mat(int rows, int cols, std::uint64_t seed) {
  CounterRng rng(seed);
  Mat a(rows, cols);
  std::uint64_t idx = 0;
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = rng.normal(idx++);
  return a;
}

// Snapshots from a known squared-exponential GP on the ring.
SnapshotSet gp_snapshots(int d, int n, const KernelParams& truth, std::uint64_t seed) {
  RingMesh mesh{d, 1.0};
  Mat sigma = sq_exp_kernel_matrix(mesh, truth);
  CovarianceFactor chol = cholesky_factor(sigma);
  Mat draws = sample_gaussian(Vec::Zero(d), chol, n, seed);
  return make_snaps(draws);
}

}  // namespace

TEST_CASE("empirical covariance of identical snapshots is zero") {
  Mat cols(3, 2);
  cols.col(0) << 1, 2, 3;
  cols.col(1) << 1, 2, 3;
  auto [mean, cov] = empirical_covariance(make_snaps(cols));
  CHECK((mean - cols.col(0)).norm() == 0.0);
  CHECK(cov.norm() == 0.0);
}

TEST_CASE("empirical covariance hand example") {
  Mat cols(2, 2);
  cols.col(0) << 1, 0;
  cols.col(1) << -1, 0;
  auto [mean, cov] = empirical_covariance(make_snaps(cols));
  CHECK(mean.norm() == 0.0);
  Mat expected(2, 2);
  expected << 2, 0, 0, 0;
  CHECK((cov - expected).norm() == 0.0);
}

TEST_CASE("leading_eigenpairs on a diagonal matrix") {
  Vec diag(3);
  diag << 3, 1, 2;
  Mat cov = diag.asDiagonal();
  EigenPairs p = leading_eigenpairs(cov, 2);
  CHECK(p.values(0) == doctest::Approx(3.0));
  CHECK(p.values(1) == doctest::Approx(2.0));
  CHECK(std::abs(p.vectors(0, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(p.vectors(2, 1)) == doctest::Approx(1.0));
  CHECK(p.vectors(0, 0) > 0.0);  // sign convention
  CHECK(p.vectors(2, 1) > 0.0);
}

TEST_CASE("leading_eigenpairs on a rank-1 matrix") {
  Vec u(3);
  u << 1, 2, 2;
  Mat cov = u * u.transpose();
  EigenPairs p = leading_eigenpairs(cov, 2);
  CHECK(p.values(0) == doctest::Approx(u.squaredNorm()));
  CHECK(p.values(1) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("leading_eigenpairs full reconstruction") {
  Mat a = random_mat(8, 8, 3);
  Mat cov = a * a.transpose() / 8.0 + 0.1 * Mat::Identity(8, 8);
  EigenPairs p = leading_eigenpairs(cov, 8);
  Mat recon = p.vectors * p.values.asDiagonal() * p.vectors.transpose();
  CHECK((recon - cov).norm() <= 1e-9 * cov.norm());
}

TEST_CASE("build_basis scales eigenvectors") {
  Vec lambda(2);
  lambda << 4, 1;
  Vec offset = Vec::Zero(2);
  SubspaceBasis b = build_basis(lambda, Mat::Identity(2, 2), offset, BasisSource::Pca);
  Mat expected(2, 2);
  expected << 2, 0, 0, 1;
  CHECK((b.P - expected).norm() == 0.0);
  CHECK(b.zero_columns == 0);
}

TEST_CASE("build_basis zero eigenvalue gives zero column and a warning count") {
  Vec lambda(2);
  lambda << 1, 0;
  SubspaceBasis b =
      build_basis(lambda, Mat::Identity(2, 2), Vec::Zero(2), BasisSource::Pca);
  CHECK(b.P.col(1).norm() == 0.0);
  CHECK(b.zero_columns == 1);
}

TEST_CASE("basis whitens the generating covariance at full rank") {
  Mat a = random_mat(6, 6, 11);
  Mat sigma = a * a.transpose() / 6.0 + 0.2 * Mat::Identity(6, 6);
  EigenPairs p = leading_eigenpairs(sigma, 6);
  SubspaceBasis b = build_basis(p.values, p.vectors, Vec::Zero(6), BasisSource::Pca);
  Mat white = b.P.transpose() * sigma.ldlt().solve(b.P);
  CHECK((white - Mat::Identity(6, 6)).norm() < 1e-8);
  // P P' reconstructs sigma and P'P is the diagonal of eigenvalues.
  CHECK((b.P * b.P.transpose() - sigma).norm() <= 1e-8 * sigma.norm());
  Mat ptp = b.P.transpose() * b.P;
  CHECK((ptp - Mat(p.values.asDiagonal())).norm() <= 1e-10 * p.values.maxCoeff());
}

TEST_CASE("cumulative energy curves") {
  Vec uniform = Vec::Ones(4);
  EnergyCurve c = cumulative_energy(uniform);
  CHECK(c.fraction(0) == doctest::Approx(0.25));
  CHECK(c.fraction(2) == doctest::Approx(0.75));
  CHECK(c.fraction(3) == 1.0);
  Vec two(2);
  two << 9, 1;
  CHECK(cumulative_energy(two).fraction(0) == doctest::Approx(0.9));
  EnergyCurve degenerate = cumulative_energy(Vec::Zero(3));
  CHECK(degenerate.degenerate);
  CHECK(degenerate.fraction.minCoeff() == 1.0);
}

TEST_CASE("squared exponential kernel basics") {
  KernelParams params{2.5, 4.0};
  CHECK(sq_exp_kernel(0.0, params) == doctest::Approx(2.5));
  CHECK(sq_exp_kernel(4.0, params) == doctest::Approx(2.5 * std::exp(-1.0)));
  RingMesh ring{240, 1.0};
  // Wraparound: nodes 0 and 238 are 2 grid units apart on the ring.
  CHECK(ring.distance(0, 238) == doctest::Approx(2.0));
  CHECK(sq_exp_kernel(ring, 0, 238, params) ==
        doctest::Approx(2.5 * std::exp(-0.25)));
}

TEST_CASE("gp_map_fit gradient matches finite differences") {
  SnapshotSet snaps = gp_snapshots(24, 16, KernelParams{1.5, 3.0}, 99);
  GpLogPrior prior;
  Vec x(2);
  x << std::log(1.2), std::log(2.4);
  Vec grad(2);
  const double f0 = gp_map_objective(snaps, prior, x, &grad);
  CHECK(std::isfinite(f0));
  for (int k = 0; k < 2; ++k) {
    const double h = 1e-6;
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    const double fd =
        (gp_map_objective(snaps, prior, xp, nullptr) -
         gp_map_objective(snaps, prior, xm, nullptr)) /
        (2 * h);
    CHECK(grad(k) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("gp_map_fit recovers known kernel parameters within 20%") {
  const KernelParams truth{2.0, 5.0};
  SnapshotSet snaps = gp_snapshots(60, 256, truth, 4242);
  GpFit fit = gp_map_fit(snaps, GpLogPrior{}, KernelParams{1.0, 2.0});
  CHECK(std::abs(fit.params.variance - truth.variance) <= 0.2 * truth.variance);
  CHECK(std::abs(fit.params.length_scale - truth.length_scale) <= 0.2 * truth.length_scale);
}

TEST_CASE("gp_map_fit rejects a single snapshot") {
  Mat one = random_mat(10, 1, 1);
  SnapshotSet snaps = make_snaps(one);
  CHECK_THROWS_AS(gp_map_fit(snaps, GpLogPrior{}, KernelParams{1.0, 1.0}), OptimFailed);
}

TEST_CASE("pca and gp bases keep P'P diagonal") {
  SnapshotSet snaps = gp_snapshots(30, 64, KernelParams{1.0, 4.0}, 5);
  SubspaceBasis pca = pca_basis(snaps, 6);
  Mat ptp = pca.P.transpose() * pca.P;
  Mat lam = Mat(pca.eigenvalues.asDiagonal());
  CHECK((ptp - lam).norm() <= 1e-10 * std::max(1.0, lam.norm()));
  SubspaceBasis gp = gp_basis(snaps, KernelParams{1.0, 4.0}, 6);
  CHECK(gp.source == BasisSource::Gp);
  CHECK(gp.P.cols() == 6);
}
