#pragma once

#include "subkal/optim.hpp"
#include "subkal/subspace.hpp"
#include "subkal/types.hpp"

namespace subkal {

// Uniform periodic 1-D finite-element mesh with linear hat functions. Nodes
// coincide with state components; element length = spacing.
struct RingFem {
  int nodes = 0;
  double spacing = 1.0;
};

// SPDE-induced sparse-precision model: (gamma - div(kappa grad))^(alpha/2)
// discretized with lumped mass. nu = log(kappa) at the nodes.
struct GmrfModel {
  int alpha_hat = 2;  // in {1, 2, 3, 4}
  double gamma = 1.0;
  Vec nu;
  RingFem mesh;
};

// Stiffness matrix K(kappa), kappa interpolated with the same hat functions;
// symmetric positive semi-definite, circulant for constant kappa.
SpMat ring_stiffness(const RingFem& mesh, const Vec& kappa);

// Diagonal of the lumped mass matrix at unit gamma (row sums of the
// consistent mass matrix); multiply by gamma for Delta_L.
Vec ring_lumped_mass(const RingFem& mesh);

// Precision Omega(alpha, gamma, nu) via the recursion
//   Omega(1) = K + Delta_L,  Omega(a) = Omega(a-1) Delta_L^{-1} (K + Delta_L).
SpMat gmrf_assemble_precision(const GmrfModel& model);

// Priors for the MAP fit: exponential on gamma (rate), Gaussian on nu.
struct GmrfPrior {
  double gamma_rate = 1.0;
  Vec nu0;
  SpMat omega_nu;
};

// tau * D2^T D2 where D2 is the periodic second-difference operator; the
// default smoothness prior for nu.
SpMat ring_second_difference_precision(int nodes, double tau);

// Log-posterior of (gamma, nu) given snapshots, constants dropped:
//   N/2 log|Omega| - 1/2 sum_i (x_i - mu)' Omega (x_i - mu)
//   - 1/2 (nu - nu0)' Omega_nu (nu - nu0) - gamma_rate * gamma.
// mu is the per-component empirical snapshot mean. d_gamma/d_nu may be null.
double gmrf_objective(const SnapshotSet& snaps, int alpha_hat, double gamma,
                      const Vec& nu, const GmrfPrior& prior, double* d_gamma,
                      Vec* d_nu);

struct GmrfFit {
  GmrfModel model;
  double objective = 0.0;
  int iterations = 0;
};

// MAP fit with analytic gradients; optimizes (log gamma, nu).
GmrfFit gmrf_map_fit(const SnapshotSet& snaps, int alpha_hat, const GmrfPrior& prior,
                     const OptimOptions& options = {});

GmrfPrior default_gmrf_prior(int nodes, double gamma_rate = 1.0, double nu_tau = 10.0);

// Leading r eigenpairs of Omega^{-1} (trailing eigenpairs of Omega), scaled
// into a reduction basis.
SubspaceBasis basis_from_precision(const GmrfModel& model, int r, const Vec& offset);

// log|Omega| via Cholesky of K + Delta_L (sparse above `dense_limit` nodes,
// dense below).
double gmrf_logdet(const GmrfModel& model, int dense_limit = 512);

}  // namespace subkal
