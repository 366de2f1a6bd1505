#pragma once

#include <string>
#include <utility>

#include "subkal/optim.hpp"
#include "subkal/types.hpp"

namespace subkal {

// Periodic 1-D mesh; distance is the ring distance in grid units times
// spacing: d(i, j) = spacing * min(|i-j|, size - |i-j|).
struct RingMesh {
  int size = 0;
  double spacing = 1.0;

  double distance(int i, int j) const {
    int a = i - j;
    if (a < 0) a = -a;
    a %= size;
    return spacing * double(a < size - a ? a : size - a);
  }
};

// N state vectors from free model runs; columns are snapshots.
struct SnapshotSet {
  Mat snapshots;  // d x N
  RingMesh mesh;

  int dim() const { return int(snapshots.rows()); }
  int count() const { return int(snapshots.cols()); }
};

void validate_snapshots(const SnapshotSet& snaps);

// mean = (1/N) sum x_i; cov = 1/(N-1) sum (x_i - mean)(x_i - mean)^T.
std::pair<Vec, Mat> empirical_covariance(const SnapshotSet& snaps);

struct EigenPairs {
  Vec values;   // descending, negatives clamped to zero
  Mat vectors;  // orthonormal columns
};

// Leading r eigenpairs of a symmetric matrix. Sign convention: in each
// eigenvector the first component of largest absolute value is positive.
EigenPairs leading_eigenpairs(const Mat& cov, int r);

enum class BasisSource { Pca, Gp, Gmrf };

std::string to_string(BasisSource s);
BasisSource basis_source_from_string(const std::string& s);

// Fixed d x r reduction operator; column j is sqrt(lambda_j) * u_j.
struct SubspaceBasis {
  Mat P;
  Vec eigenvalues;  // descending
  BasisSource source = BasisSource::Pca;
  Vec offset;       // fixed mean used by the fixed-offset parameterization
  int zero_columns = 0;

  int dim() const { return int(P.rows()); }
  int rank() const { return int(P.cols()); }
};

// Zero eigenvalues yield zero columns (counted in zero_columns).
SubspaceBasis build_basis(const Vec& lambda, const Mat& u, const Vec& offset,
                          BasisSource source);

struct EnergyCurve {
  Vec fraction;            // nondecreasing, ends at exactly 1
  bool degenerate = false;  // all-zero spectrum
};

// fraction[r-1] = sum_{i<r} lambda_i / sum_i lambda_i.
EnergyCurve cumulative_energy(const Vec& lambda_full);

// Squared exponential kernel parameters.
struct KernelParams {
  double variance = 1.0;      // theta_1, state units^2
  double length_scale = 1.0;  // theta_2, mesh distance units
};

// variance * exp(-(dist / length_scale)^2)
double sq_exp_kernel(double dist, const KernelParams& params);
double sq_exp_kernel(const RingMesh& mesh, int i, int j, const KernelParams& params);

// Dense kernel matrix with a relative nugget variance*nugget_rel on the
// diagonal to keep the factorization positive definite.
Mat sq_exp_kernel_matrix(const RingMesh& mesh, const KernelParams& params,
                         double nugget_rel = 1e-8);

// Independent normal priors on log(variance) and log(length_scale); a
// nonpositive sd disables the corresponding term (flat prior).
struct GpLogPrior {
  double log_variance_mean = 0.0;
  double log_variance_sd = -1.0;
  double log_length_mean = 0.0;
  double log_length_sd = -1.0;
};

struct GpFit {
  KernelParams params;
  double objective = 0.0;
  int iterations = 0;
};

// MAP fit of the kernel parameters from snapshots; the GP mean is the
// per-component empirical snapshot mean. Optimizes in log-parameter space
// with analytic gradients. Throws OptimFailed when the optimizer stalls or
// when fewer than two snapshots are supplied.
GpFit gp_map_fit(const SnapshotSet& snaps, const GpLogPrior& prior,
                 KernelParams init, const OptimOptions& options = {});

// Objective used by gp_map_fit, exposed for gradient tests. Parameters are
// (log variance, log length_scale); grad may be null.
double gp_map_objective(const SnapshotSet& snaps, const GpLogPrior& prior,
                        const Vec& log_params, Vec* grad);

// Basis constructors. The offset stored in the basis is the empirical
// snapshot mean for all sources.
SubspaceBasis pca_basis(const SnapshotSet& snaps, int r);
SubspaceBasis gp_basis(const SnapshotSet& snaps, const KernelParams& params, int r);

}  // namespace subkal
