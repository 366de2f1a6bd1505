#include "subkal/lorenz2.hpp"

#include <cmath>

#include "subkal/errors.hpp"
#include "subkal/rng.hpp"

namespace subkal {

void LorenzIIConfig::validate() const {
  if (k_smooth < 1 || k_smooth % 2 == 0)
    throw ConfigError("lorenz2: k_smooth must be an odd integer >= 1");
  if (n <= 2 * k_smooth) throw ConfigError("lorenz2: need n > 2 k_smooth");
  if (int(forcing.size()) != n) throw DimensionMismatch("lorenz2: forcing length != n");
  if (!(dt > 0.0)) throw ConfigError("lorenz2: dt must be positive");
}

LorenzIIConfig make_lorenz2_config(int n, int k_smooth, double forcing, double dt) {
  LorenzIIConfig cfg;
  cfg.n = n;
  cfg.k_smooth = k_smooth;
  cfg.forcing = Vec::Constant(n, forcing);
  cfg.dt = dt;
  cfg.validate();
  return cfg;
}

namespace {

inline int wrap(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

}  // namespace

Vec lorenz2_rhs_reference(const Vec& x, const LorenzIIConfig& cfg) {
  cfg.validate();
  const int n = cfg.n, k = cfg.k_smooth;
  const int half = (k - 1) / 2;  // J
  Vec out(n);
  for (int c = 0; c < n; ++c) {
    long double acc = 0.0L;
    for (int j = -half; j <= half; ++j)
      for (int i = -half; i <= half; ++i) {
        const double a = -x(wrap(c - 2 * k - i, n)) * x(wrap(c - k - j, n));
        const double b = x(wrap(c - k + j - i, n)) * x(wrap(c + k + j, n));
        acc += a + b;
      }
    out(c) = double(acc) / double(k * k) - x(c) + cfg.forcing(c);
  }
  return out;
}

Vec lorenz2_rhs(const Vec& x, const LorenzIIConfig& cfg) {
  const int n = cfg.n, k = cfg.k_smooth;
  const int half = (k - 1) / 2;
  // W_c = (1/K) sum_{i=-J..J} X_{c-i}
  Vec w(n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n; ++c) {
    long double acc = 0.0L;
    for (int i = -half; i <= half; ++i) acc += x(wrap(c - i, n));
    w(c) = double(acc) / double(k);
  }
  Vec out(n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n; ++c) {
    long double acc = 0.0L;
    for (int j = -half; j <= half; ++j)
      acc += w(wrap(c - k + j, n)) * x(wrap(c + k + j, n));
    out(c) = -w(wrap(c - 2 * k, n)) * w(wrap(c - k, n)) + double(acc) / double(k) -
             x(c) + cfg.forcing(c);
  }
  return out;
}

Vec lorenz2_rhs_jvp(const Vec& x, const Vec& v, const LorenzIIConfig& cfg) {
  const int n = cfg.n, k = cfg.k_smooth;
  const int half = (k - 1) / 2;
  Vec wx(n), wv(n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n; ++c) {
    long double ax = 0.0L, av = 0.0L;
    for (int i = -half; i <= half; ++i) {
      ax += x(wrap(c - i, n));
      av += v(wrap(c - i, n));
    }
    wx(c) = double(ax) / double(k);
    wv(c) = double(av) / double(k);
  }
  Vec out(n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n; ++c) {
    long double acc = 0.0L;
    for (int j = -half; j <= half; ++j) {
      const int a = wrap(c - k + j, n), b = wrap(c + k + j, n);
      acc += wv(a) * x(b) + wx(a) * v(b);
    }
    const int m2 = wrap(c - 2 * k, n), m1 = wrap(c - k, n);
    out(c) = -wv(m2) * wx(m1) - wx(m2) * wv(m1) + double(acc) / double(k) - v(c);
  }
  return out;
}

Vec rk4_step(const Vec& x, double dt, const RhsFn& rhs) {
  if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
  Vec k1 = rhs(x);
  Vec k2 = rhs(x + 0.5 * dt * k1);
  Vec k3 = rhs(x + 0.5 * dt * k2);
  Vec k4 = rhs(x + dt * k3);
  Vec out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) throw NonFiniteState("rk4_step: state blew up");
  return out;
}

Vec lorenz2_flow(const Vec& x, const LorenzIIConfig& cfg, int n_steps) {
  Vec state = x;
  auto rhs = [&cfg](const Vec& s) { return lorenz2_rhs(s, cfg); };
  for (int s = 0; s < n_steps; ++s) state = rk4_step(state, cfg.dt, rhs);
  return state;
}

Vec lorenz2_flow_perturbed(const Vec& x, const LorenzIIConfig& cfg, int n_steps,
                           double rel_noise, std::uint64_t seed,
                           std::uint64_t step_offset, int redraw_every_steps) {
  CounterRng rng(seed);
  Vec state = x;
  LorenzIIConfig noisy = cfg;
  for (int s = 0; s < n_steps; ++s) {
    const std::uint64_t draw =
        redraw_every_steps > 0 ? (step_offset + s) / std::uint64_t(redraw_every_steps) : 0;
    for (int i = 0; i < cfg.n; ++i)
      noisy.forcing(i) =
          cfg.forcing(i) * (1.0 + rel_noise * rng.normal(draw * cfg.n + i));
    auto rhs = [&noisy](const Vec& v) { return lorenz2_rhs(v, noisy); };
    state = rk4_step(state, cfg.dt, rhs);
  }
  return state;
}

Vec central_difference_tangent(const RhsFn& evolve, const Vec& x, const Vec& v) {
  const double vmax = v.lpNorm<Eigen::Infinity>();
  if (vmax == 0.0) return Vec::Zero(x.size());
  const double eps = 1e-6 * (1.0 + x.lpNorm<Eigen::Infinity>()) / std::max(vmax, 1.0);
  return (evolve(x + eps * v) - evolve(x - eps * v)) / (2.0 * eps);
}

Vec lorenz2_flow_tangent(const Vec& x, const Vec& v, const LorenzIIConfig& cfg,
                         int n_steps) {
  Vec state = x;
  Vec tan = v;
  const double dt = cfg.dt;
  for (int s = 0; s < n_steps; ++s) {
    Vec k1 = lorenz2_rhs(state, cfg);
    Vec d1 = lorenz2_rhs_jvp(state, tan, cfg);
    Vec x2 = state + 0.5 * dt * k1;
    Vec t2 = tan + 0.5 * dt * d1;
    Vec k2 = lorenz2_rhs(x2, cfg);
    Vec d2 = lorenz2_rhs_jvp(x2, t2, cfg);
    Vec x3 = state + 0.5 * dt * k2;
    Vec t3 = tan + 0.5 * dt * d2;
    Vec k3 = lorenz2_rhs(x3, cfg);
    Vec d3 = lorenz2_rhs_jvp(x3, t3, cfg);
    Vec x4 = state + dt * k3;
    Vec t4 = tan + dt * d3;
    Vec k4 = lorenz2_rhs(x4, cfg);
    Vec d4 = lorenz2_rhs_jvp(x4, t4, cfg);
    state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    tan += (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    if (!state.allFinite() || !tan.allFinite())
      throw NonFiniteState("lorenz2_flow_tangent: blew up");
  }
  return tan;
}

}  // namespace subkal
