#pragma once

// Mackey-Glass delay differential equation
//
//   dr/dt = 0.2 r(t - tau) / (1 + r(t - tau)^10) - 0.1 r(t)
//
// integrated with classical fixed-step RK4. Delayed values between grid
// points come from cubic Hermite interpolation on the stored trajectory and
// its stored derivative, which keeps the scheme fourth order.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "esncid/rng.hpp"
#include "esncid/time_series.hpp"

namespace esncid {

struct MackeyGlassParams {
  double tau = 17.0;
  double dt_int = 0.1;
  std::size_t n_samples = 3000;
  std::size_t sample_every = 10;
  double history_value = 1.2;
  // Half-width of the single uniform offset added to the constant history.
  double jitter = 1e-3;
  std::uint64_t seed = 0;
};

inline double mackey_glass_rhs(double r, double r_delayed) {
  return 0.2 * r_delayed / (1.0 + std::pow(r_delayed, 10)) - 0.1 * r;
}

inline TimeSeries integrate_mackey_glass(const MackeyGlassParams& p) {
  if (!(p.tau > 0.0)) throw std::invalid_argument("integrate_mackey_glass: tau must be positive");
  if (!(p.dt_int > 0.0)) throw std::invalid_argument("integrate_mackey_glass: dt_int must be positive");
  if (p.n_samples < 1) throw std::invalid_argument("integrate_mackey_glass: n_samples must be >= 1");
  if (p.sample_every < 1) throw std::invalid_argument("integrate_mackey_glass: sample_every must be >= 1");
  const double ratio = p.tau / p.dt_int;
  const auto lag = static_cast<std::ptrdiff_t>(std::llround(ratio));
  if (lag < 1 || std::abs(ratio - static_cast<double>(lag)) > 1e-9 * ratio)
    throw std::invalid_argument("integrate_mackey_glass: tau / dt_int must be a positive integer");

  double history = p.history_value;
  if (p.jitter > 0.0) {
    Stream rng(p.seed);
    history += rng.uniform(-p.jitter, p.jitter);
  }

  const std::size_t n_steps = (p.n_samples - 1) * p.sample_every;
  std::vector<double> r(n_steps + 1);
  std::vector<double> f(n_steps + 1);
  const double h = p.dt_int;

  // Value of r at grid position (idx + theta), theta in [0, 1].
  auto delayed = [&](std::ptrdiff_t idx, double theta) {
    if (idx < 0) return history;
    if (theta == 0.0) return r[static_cast<std::size_t>(idx)];
    const auto a = static_cast<std::size_t>(idx);
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + theta;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * r[a] + h10 * h * f[a] + h01 * r[a + 1] + h11 * h * f[a + 1];
  };

  r[0] = history;
  f[0] = mackey_glass_rhs(r[0], delayed(-lag, 0.0));
  for (std::size_t n = 0; n < n_steps; ++n) {
    const auto base = static_cast<std::ptrdiff_t>(n) - lag;
    const double d0 = delayed(base, 0.0);
    const double dh = delayed(base, 0.5);
    const double d1 = base + 1 < 0 ? history : r[static_cast<std::size_t>(base + 1)];
    const double k1 = mackey_glass_rhs(r[n], d0);
    const double k2 = mackey_glass_rhs(r[n] + 0.5 * h * k1, dh);
    const double k3 = mackey_glass_rhs(r[n] + 0.5 * h * k2, dh);
    const double k4 = mackey_glass_rhs(r[n] + h * k3, d1);
    r[n + 1] = r[n] + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    if (!std::isfinite(r[n + 1]) || std::abs(r[n + 1]) > 1e6)
      throw std::runtime_error("integrate_mackey_glass: trajectory diverged");
    f[n + 1] = mackey_glass_rhs(r[n + 1], d1);
  }

  TimeSeries out;
  out.dt = h * static_cast<double>(p.sample_every);
  out.values.reserve(p.n_samples);
  for (std::size_t i = 0; i < p.n_samples; ++i) out.values.push_back(r[i * p.sample_every]);
  return out;
}

inline TimeSeries squash(const TimeSeries& s) {
  TimeSeries out{s.values, s.dt};
  for (double& v : out.values) v = std::tanh(v - 1.0);
  return out;
}

}  // namespace esncid
