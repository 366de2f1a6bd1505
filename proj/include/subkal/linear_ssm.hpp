#pragma once

#include <cstdint>
#include <memory>

#include "subkal/model_ops.hpp"
#include "subkal/types.hpp"

namespace subkal {

// Dense linear Gaussian state-space model.
struct LinearSSMConfig {
  Mat m_matrix;  // d x d evolution
  Mat h_matrix;  // m x d observation
  Mat q;         // SPD d x d
  Mat r;         // SPD m x m

  void validate() const;
  int state_dim() const { return int(m_matrix.rows()); }
  int obs_dim() const { return int(h_matrix.rows()); }
};

// Wraps the matrices as apply-operators (with counters when provided).
LinearModelOps linear_ssm_ops(const LinearSSMConfig& cfg,
                              std::shared_ptr<ApplyCounters> counters = nullptr);

// Same model through the nonlinear interface; tangent operators are exact.
NonlinearModelOps linear_ssm_nonlinear_ops(const LinearSSMConfig& cfg,
                                           std::shared_ptr<ApplyCounters> counters = nullptr);

// Seeded random system: M has N(0,1)/sqrt(d) entries rescaled to the given
// spectral radius, H has N(0,1) entries, Q = q_scale I, R = r_scale I.
LinearSSMConfig random_linear_ssm(int d, int m, std::uint64_t seed,
                                  double spectral_radius = 0.9, double q_scale = 0.05,
                                  double r_scale = 1.0);

}  // namespace subkal
