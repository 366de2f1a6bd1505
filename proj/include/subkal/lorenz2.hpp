#pragma once

#include <cstdint>
#include <functional>

#include "subkal/types.hpp"

namespace subkal {

// Generalized Lorenz-96 ("model II"): each of the n periodic components obeys
//   dX/dt = [X, X]_{K} - X + F
// with the K-smoothed bilinear bracket. K = 1 recovers the classic model.
struct LorenzIIConfig {
  int n = 240;
  int k_smooth = 33;  // odd
  Vec forcing;        // length n
  double dt = 0.025;

  void validate() const;
};

LorenzIIConfig make_lorenz2_config(int n, int k_smooth, double forcing, double dt = 0.025);

// Direct O(n K^2) double-sum evaluation; serial reference kept for testing.
Vec lorenz2_rhs_reference(const Vec& x, const LorenzIIConfig& cfg);

// O(n K) evaluation through the smoothed field W, OpenMP-parallel over
// components; agrees with the reference to 1e-12 absolute.
Vec lorenz2_rhs(const Vec& x, const LorenzIIConfig& cfg);

// Jacobian-vector product of the right-hand side at x.
Vec lorenz2_rhs_jvp(const Vec& x, const Vec& v, const LorenzIIConfig& cfg);

using RhsFn = std::function<Vec(const Vec&)>;

// Classical RK4 step; throws NonFiniteState when the result blows up.
Vec rk4_step(const Vec& x, double dt, const RhsFn& rhs);

// n_steps RK4 steps of the Lorenz II flow (the filter evolution map).
Vec lorenz2_flow(const Vec& x, const LorenzIIConfig& cfg, int n_steps);

// Same flow with the forcing perturbed each RK4 step: F -> F (1 + rel z),
// z standard normal drawn from the counter stream (seed, step index).
Vec lorenz2_flow_perturbed(const Vec& x, const LorenzIIConfig& cfg, int n_steps,
                           double rel_noise, std::uint64_t seed,
                           std::uint64_t step_offset, int redraw_every_steps = 1);

// Central finite-difference tangent of an arbitrary evolution map:
//   (M(x + eps v) - M(x - eps v)) / (2 eps),
// eps = 1e-6 (1 + |x|_inf) / max(|v|_inf, 1).
Vec central_difference_tangent(const RhsFn& evolve, const Vec& x, const Vec& v);

// Exact tangent of the discrete RK4 flow (forward-mode differentiation of
// the stages, using the analytic RHS Jacobian-vector product).
Vec lorenz2_flow_tangent(const Vec& x, const Vec& v, const LorenzIIConfig& cfg,
                         int n_steps);

}  // namespace subkal
