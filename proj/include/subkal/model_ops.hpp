#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>

#include "subkal/gaussian.hpp"
#include "subkal/types.hpp"

namespace subkal {

// Invocation counters wired into the model operator lambdas; used to assert
// the per-step model-apply budgets of the reduced filters.
struct ApplyCounters {
  std::atomic<std::uint64_t> evolve{0};
  std::atomic<std::uint64_t> observe{0};
  std::atomic<std::uint64_t> tangent_evolve{0};
  std::atomic<std::uint64_t> tangent_observe{0};

  void reset() {
    evolve = 0;
    observe = 0;
    tangent_evolve = 0;
    tangent_observe = 0;
  }
  std::uint64_t model_total() const { return evolve + tangent_evolve; }
};

using ApplyFn = std::function<Vec(const Vec&)>;
using TangentFn = std::function<Vec(const Vec&, const Vec&)>;  // (linearization point, v)

// Linear state-space model x_k = M x_{k-1} + E_k, y_k = H x_k + e_k, exposed
// as apply-operators so large models never need explicit matrices.
struct LinearModelOps {
  int state_dim = 0;
  int obs_dim = 0;
  ApplyFn evolve_apply;  // v -> M v
  ApplyFn obs_apply;     // v -> H v
  SpdOperator q;         // model-error covariance Q_k
  SpdOperator r_cov;     // observation-error covariance R_k
  std::shared_ptr<ApplyCounters> counters;
};

// Nonlinear model with tangent-linear operators at a given point.
struct NonlinearModelOps {
  int state_dim = 0;
  int obs_dim = 0;
  ApplyFn evolve;              // x -> M(x)
  ApplyFn observe;             // x -> H(x)
  TangentFn tangent_evolve;    // (x, v) -> dM/dx|_x v
  TangentFn tangent_observe;   // (x, v) -> dH/dx|_x v
  bool observe_is_linear = false;
  SpdOperator q;
  SpdOperator r_cov;
  std::shared_ptr<ApplyCounters> counters;
};

}  // namespace subkal
