#pragma once

#include <functional>
#include <string>

#include "subkal/types.hpp"

namespace subkal {

// Objective callback: returns f(x) and fills grad with df/dx.
using ObjectiveFn = std::function<double(const Vec& x, Vec& grad)>;

struct OptimOptions {
  int max_iterations = 300;
  int history = 10;          // L-BFGS memory
  double grad_tol = 1e-6;    // stop when ||g|| <= grad_tol * (1 + |f|)
  double min_step = 1e-14;   // line search gives up below this
};

struct OptimResult {
  Vec x;
  double value = 0.0;
  Vec gradient;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

// L-BFGS ascent with backtracking Armijo line search. The accepted iterate
// sequence is strictly nondecreasing in objective value. Returns the best
// iterate whether or not the gradient tolerance was reached.
OptimResult lbfgs_maximize(const ObjectiveFn& objective, Vec x0,
                           const OptimOptions& options = {});

}  // namespace subkal
