#include "subkal/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "subkal/errors.hpp"

namespace subkal {

namespace {

// Corrections are stored in minimization form for the negated objective:
// s = dx, y = -(dg of f), so s'y > 0 under the usual curvature condition.
struct Correction {
  Vec s, y;
  double rho;
};

// Two-loop recursion applied to the gradient of f. The memory approximates
// the inverse Hessian of -f (positive definite), so the result is an ascent
// direction for f.
Vec lbfgs_direction(const Vec& grad, const std::deque<Correction>& mem) {
  Vec q = grad;
  std::vector<double> alpha(mem.size());
  for (int i = int(mem.size()) - 1; i >= 0; --i) {
    alpha[i] = mem[i].rho * mem[i].s.dot(q);
    q -= alpha[i] * mem[i].y;
  }
  if (!mem.empty()) {
    const auto& last = mem.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const double beta = mem[i].rho * mem[i].y.dot(q);
    q += (alpha[i] - beta) * mem[i].s;
  }
  return q;
}

}  // namespace

OptimResult lbfgs_maximize(const ObjectiveFn& objective, Vec x0,
                           const OptimOptions& options) {
  OptimResult res;
  Vec grad(x0.size());
  double f = objective(x0, grad);
  if (!std::isfinite(f)) throw OptimFailed("lbfgs_maximize: objective not finite at x0");

  Vec x = std::move(x0);
  res.x = x;
  res.value = f;
  res.gradient = grad;

  std::deque<Correction> mem;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    res.iterations = iter;
    if (grad.norm() <= options.grad_tol * (1.0 + std::abs(f))) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }

    Vec dir = lbfgs_direction(grad, mem);
    double slope = dir.dot(grad);
    if (slope <= 0.0) {  // not an ascent direction; fall back to steepest ascent
      dir = grad;
      slope = grad.squaredNorm();
      mem.clear();
    }

    // Backtracking Armijo line search; accepted steps strictly increase f.
    // The very first step is capped so a stiff objective cannot launch the
    // iterate out of the finite region.
    double step = 1.0;
    if (iter == 0) {
      const double dmax = dir.lpNorm<Eigen::Infinity>();
      if (dmax > 1.0) step = 1.0 / dmax;
    }
    Vec x_new, grad_new(grad.size());
    double f_new = f;
    bool accepted = false;
    while (step >= options.min_step) {
      x_new = x + step * dir;
      f_new = objective(x_new, grad_new);
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.message = "line search failed to make progress";
      return res;
    }

    Correction c;
    c.s = x_new - x;
    c.y = grad - grad_new;  // minimization-form y for -f
    const double sy = c.s.dot(c.y);
    if (std::isfinite(sy) && sy > 1e-12 * c.s.norm() * c.y.norm()) {
      c.rho = 1.0 / sy;
      mem.push_back(std::move(c));
      if (int(mem.size()) > options.history) mem.pop_front();
    }

    x = std::move(x_new);
    f = f_new;
    grad = grad_new;
    if (f >= res.value) {
      res.x = x;
      res.value = f;
      res.gradient = grad;
    }
  }
  res.iterations = options.max_iterations;
  res.message = "maximum iterations reached";
  return res;
}

}  // namespace subkal
