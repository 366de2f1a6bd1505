#pragma once

#include <cstdint>
#include <optional>

#include "subkal/gaussian.hpp"
#include "subkal/model_ops.hpp"
#include "subkal/subspace.hpp"
#include "subkal/types.hpp"

namespace subkal {

// How the state is written in subspace coordinates:
//   PriorMeanCentered: x_k = x_k^f + P alpha_k (correction to the forecast)
//   FixedOffset:       x_k = offset + P alpha_k (state itself in the subspace)
enum class ParamMode { PriorMeanCentered, FixedOffset };

struct FilterState {
  GaussianBelief belief;  // over alpha (reduced filters) or over x (full filters)
  Vec prior_mean_full;    // forecast mean x_k^f in the full space
  long step_index = 0;
  Mat ensemble;           // members of the full-space EnKF baseline, else empty
};

// Initial states: alpha_0 = 0, Psi_0 = I for reduced filters; mean x0, cov c0
// for full filters.
FilterState initial_reduced_state(int r, const Vec& x0);
FilterState initial_full_state(const Vec& x0, const Mat& c0);

// Static-problem posterior over subspace coordinates for a linear map F and
// basis whitening the prior:
//   Psi  = ((F P)' R^-1 (F P) + I)^-1
//   alpha = Psi (F P)' R^-1 (y - F mu)
GaussianBelief static_reduced_posterior(const ApplyFn& f_apply, const SpdOperator& r_cov,
                                        const Vec& mu, const SubspaceBasis& basis,
                                        const Vec& y);

// Standard dense Kalman filter step (predict + update, covariance symmetrized).
FilterState kf_step(const FilterState& state, const LinearModelOps& model, const Vec& y);

// One step of the subspace-constrained Kalman filter:
//   x_k^f = M (center + P alpha), A A' = Psi, B = M P A,
//   (C_k^f)^-1 P columnwise by Sherman-Morrison-Woodbury,
//   Psi^a = ((HP)'R^-1 HP + P'(C^f)^-1 P)^-1, alpha^a = Psi^a (HP)'R^-1 r_k.
// Exactly r+1 evolve applies and r+1 observation applies per step.
FilterState reduced_kf_step(const FilterState& state, const LinearModelOps& model,
                            const SubspaceBasis& basis, const Vec& y,
                            ParamMode mode = ParamMode::PriorMeanCentered);

// Extended variant: mean propagated with the nonlinear model, residual with
// the nonlinear observation model, B and HP built with tangent operators.
FilterState reduced_ekf_step(const FilterState& state, const NonlinearModelOps& model,
                             const SubspaceBasis& basis, const Vec& y,
                             ParamMode mode = ParamMode::PriorMeanCentered);

// Full-space EKF with dense Jacobians assembled from tangent applies.
FilterState ekf_step(const FilterState& state, const NonlinearModelOps& model,
                     const Vec& y);

// Subspace-constrained ensemble filter. Samples n_ens coordinates from the
// previous posterior, propagates them with the nonlinear model, and replaces
// the forecast covariance by X X' + Q (X scaled by 1/sqrt(n_ens) around the
// propagated mean). n_ens = 0 degenerates to C^f = Q. Requires a linear
// observation operator.
FilterState reduced_enkf_step(const FilterState& state, const NonlinearModelOps& model,
                              const SubspaceBasis& basis, const Vec& y, int n_ens,
                              std::uint64_t seed,
                              ParamMode mode = ParamMode::PriorMeanCentered);

// Element-wise localization weights for ensemble covariances.
struct LocalizationTaper {
  Mat weights;  // d x d, entries in [0, 1]
};

// Gaspari-Cohn 5th-order piecewise rational correlation function with
// support radius 2c.
double gaspari_cohn(double dist, double c);
LocalizationTaper gaspari_cohn_taper(const RingMesh& mesh, double cutoff);

// Classical stochastic EnKF baseline with perturbed observations. The gain is
// built from the (optionally tapered) forecast sample covariance plus Q;
// members receive model-noise perturbations so the analysis spread matches
// the Kalman posterior in the large-ensemble limit. The forecast mean is the
// ensemble mean.
FilterState enkf_step(const FilterState& state, const NonlinearModelOps& model,
                      const Vec& y, int n_ens, std::uint64_t seed,
                      const LocalizationTaper* taper = nullptr);

// Reduced-order KF variant for comparison: identical pipeline to
// reduced_kf_step except the subspace prior covariance is the projected
// covariance P' C^f P (marginal) instead of (P' (C^f)^-1 P)^-1 (conditional).
FilterState rokf_step(const FilterState& state, const LinearModelOps& model,
                      const SubspaceBasis& basis, const Vec& y);

// x_k^f + P alpha (prior-mean-centered) or offset + P alpha (fixed offset).
Vec reconstruct_state(const FilterState& state, const SubspaceBasis& basis,
                      ParamMode mode = ParamMode::PriorMeanCentered);

}  // namespace subkal
