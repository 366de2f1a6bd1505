#include <cmath>

#include "doctest.h"
#include "subkal/errors.hpp"
#include "subkal/lorenz2.hpp"
#include "subkal/rng.hpp"

using namespace subkal;

namespace {

Vec random_state(int n, std::uint64_t seed, double scale = 8.0) {
  CounterRng rng(seed);
  Vec x(n);
  for (int i = 0; i < n; ++i) x(i) = scale * (rng.uniform(i) - 0.5);
  return x;
}

Vec classic_l96_rhs(const Vec& x, double f) {
  const int n = int(x.size());
  Vec out(n);
  auto at = [&](int i) { return x(((i % n) + n) % n); };
  for (int i = 0; i < n; ++i)
    out(i) = (at(i + 1) - at(i - 2)) * at(i - 1) - x(i) + f;
  return out;
}

Vec attractor_state(const LorenzIIConfig& cfg, std::uint64_t seed, int spin_steps) {
  Vec x = cfg.forcing;
  CounterRng rng(seed);
  for (int i = 0; i < cfg.n; ++i) x(i) *= 1.0 + 0.01 * rng.normal(i);
  return lorenz2_flow(x, cfg, spin_steps);
}

}  // namespace

TEST_CASE("K=1 reduces to the classic Lorenz-96 right-hand side") {
  LorenzIIConfig cfg = make_lorenz2_config(12, 1, 8.0);
  Vec x = random_state(12, 7);
  Vec a = lorenz2_rhs_reference(x, cfg);
  Vec b = classic_l96_rhs(x, 8.0);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero state gives the forcing") {
  LorenzIIConfig cfg = make_lorenz2_config(40, 5, 10.0);
  Vec rhs = lorenz2_rhs(Vec::Zero(40), cfg);
  CHECK((rhs - cfg.forcing).norm() == 0.0);
}

TEST_CASE("right-hand side commutes with ring shifts") {
  LorenzIIConfig cfg = make_lorenz2_config(48, 5, 10.0);
  Vec x = random_state(48, 3);
  Vec rhs = lorenz2_rhs(x, cfg);
  for (int shift : {1, 7, 30}) {
    Vec xs(48), expected(48);
    for (int i = 0; i < 48; ++i) {
      xs((i + shift) % 48) = x(i);
      expected((i + shift) % 48) = rhs(i);
    }
    Vec got = lorenz2_rhs(xs, cfg);
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("optimized path agrees with the reference double sum") {
  struct Case {
    int n, k;
  };
  for (Case c : {Case{12, 1}, Case{40, 5}, Case{240, 33}, Case{240, 65}}) {
    LorenzIIConfig cfg = make_lorenz2_config(c.n, c.k, 12.0);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Vec x = random_state(c.n, seed * 19 + 1, 24.0);
      Vec ref = lorenz2_rhs_reference(x, cfg);
      Vec fast = lorenz2_rhs(x, cfg);
      CHECK((ref - fast).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("rk4 with zero rhs keeps the state") {
  Vec x = random_state(5, 1);
  Vec out = rk4_step(x, 0.1, [](const Vec& v) { return Vec(Vec::Zero(v.size())); });
  CHECK((out - x).norm() == 0.0);
}

TEST_CASE("rk4 matches the exponential to fourth order") {
  Vec x = Vec::Ones(1);
  Vec out = rk4_step(x, 0.1, [](const Vec& v) { return Vec(-v); });
  CHECK(std::abs(out(0) - std::exp(-0.1)) < 1e-7);
}

TEST_CASE("rk4 shows fourth-order step-halving on Lorenz II") {
  LorenzIIConfig cfg = make_lorenz2_config(240, 33, 14.0);
  Vec x = attractor_state(cfg, 5, 400);
  auto rhs = [&cfg](const Vec& v) { return lorenz2_rhs(v, cfg); };
  auto error_at = [&](double dt) {
    Vec big = rk4_step(x, dt, rhs);
    Vec half = rk4_step(rk4_step(x, dt / 2, rhs), dt / 2, rhs);
    return (big - half).norm();
  };
  const double e1 = error_at(0.05);
  const double e2 = error_at(0.025);
  CHECK(e1 / e2 > 8.0);
  CHECK(e1 / e2 < 40.0);
}

TEST_CASE("rk4 flags blow-up") {
  LorenzIIConfig cfg = make_lorenz2_config(40, 1, 8.0);
  // Sign-varying huge state (a constant state cancels the bilinear bracket).
  Vec huge = random_state(40, 9, 1e160);
  auto rhs = [&cfg](const Vec& v) { return lorenz2_rhs(v, cfg); };
  CHECK_THROWS_AS(rk4_step(huge, 0.025, rhs), NonFiniteState);
}

TEST_CASE("finite-difference tangent basics") {
  LorenzIIConfig cfg = make_lorenz2_config(240, 33, 14.0);
  Vec x = attractor_state(cfg, 6, 400);
  auto evolve = [&](const Vec& v) { return lorenz2_flow(v, cfg, 2); };

  CHECK(central_difference_tangent(evolve, x, Vec::Zero(240)).norm() == 0.0);

  Vec v1 = random_state(240, 2, 1.0);
  Vec v2 = random_state(240, 3, 1.0);
  Vec t1 = central_difference_tangent(evolve, x, v1);
  Vec t2 = central_difference_tangent(evolve, x, v2);
  Vec t12 = central_difference_tangent(evolve, x, v1 + v2);
  CHECK((t12 - t1 - t2).norm() <= 1e-5 * (t1.norm() + t2.norm()));
}

TEST_CASE("analytic flow tangent matches finite differences") {
  LorenzIIConfig cfg = make_lorenz2_config(240, 33, 14.0);
  Vec x = attractor_state(cfg, 8, 400);
  Vec v = random_state(240, 4, 1.0);
  auto evolve = [&](const Vec& s) { return lorenz2_flow(s, cfg, 2); };
  Vec fd = central_difference_tangent(evolve, x, v);
  Vec an = lorenz2_flow_tangent(x, v, cfg, 2);
  CHECK((fd - an).norm() <= 1e-6 * an.norm());
}

TEST_CASE("two nearby trajectories separate (chaos smoke test)") {
  // Measured leading Lyapunov rate for K=33, F=14 is about 0.9 per time
  // unit, so a 1e-8 perturbation needs ~20 time units to reach O(1).
  LorenzIIConfig cfg = make_lorenz2_config(240, 33, 14.0);
  Vec a = attractor_state(cfg, 10, 2000);
  Vec b = a;
  b(0) += 1e-8;
  double sep_10tu = 0.0, max_sep = 0.0;
  for (int step = 1; step <= 1400; ++step) {  // 35 time units
    a = lorenz2_flow(a, cfg, 1);
    b = lorenz2_flow(b, cfg, 1);
    max_sep = std::max(max_sep, (a - b).lpNorm<Eigen::Infinity>());
    if (step == 400) sep_10tu = max_sep;
    if (max_sep >= 1.0) break;
  }
  CHECK(sep_10tu >= 50.0 * 1e-8);  // well over a decade of growth in 10 time units
  CHECK(max_sep >= 1.0);
}

TEST_CASE("perturbed-forcing flow is seeded and reproducible") {
  LorenzIIConfig cfg = make_lorenz2_config(240, 33, 14.0);
  Vec x = attractor_state(cfg, 11, 400);
  Vec a = lorenz2_flow_perturbed(x, cfg, 4, 0.01, 77, 0);
  Vec b = lorenz2_flow_perturbed(x, cfg, 4, 0.01, 77, 0);
  Vec c = lorenz2_flow_perturbed(x, cfg, 4, 0.01, 78, 0);
  CHECK((a - b).norm() == 0.0);
  CHECK((a - c).norm() != 0.0);
}
