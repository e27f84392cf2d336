// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "entroflow/mdp.hpp"

namespace entroflow {

/// Options for the adaptive Runge-Kutta integrator.
struct OdeOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  double initial_step = 1e-3;
  double min_step = 1e-14;
  long max_steps = 5000000;
};

namespace detail {
// Dormand-Prince 5(4) coefficients (the classic RKDP tableau).
inline constexpr double dp_a21 = 1.0 / 5.0;
inline constexpr double dp_a31 = 3.0 / 40.0, dp_a32 = 9.0 / 40.0;
inline constexpr double dp_a41 = 44.0 / 45.0, dp_a42 = -56.0 / 15.0, dp_a43 = 32.0 / 9.0;
inline constexpr double dp_a51 = 19372.0 / 6561.0, dp_a52 = -25360.0 / 2187.0,
                        dp_a53 = 64448.0 / 6561.0, dp_a54 = -212.0 / 729.0;
inline constexpr double dp_a61 = 9017.0 / 3168.0, dp_a62 = -355.0 / 33.0,
                        dp_a63 = 46732.0 / 5247.0, dp_a64 = 49.0 / 176.0,
                        dp_a65 = -5103.0 / 18656.0;
inline constexpr double dp_b1 = 35.0 / 384.0, dp_b3 = 500.0 / 1113.0, dp_b4 = 125.0 / 192.0,
                        dp_b5 = -2187.0 / 6784.0, dp_b6 = 11.0 / 84.0;
inline constexpr double dp_e1 = 5179.0 / 57600.0, dp_e3 = 7571.0 / 16695.0,
                        dp_e4 = 393.0 / 640.0, dp_e5 = -92097.0 / 339200.0,
                        dp_e6 = 187.0 / 2100.0, dp_e7 = 1.0 / 40.0;
inline constexpr double dp_c2 = 1.0 / 5.0, dp_c3 = 3.0 / 10.0, dp_c4 = 4.0 / 5.0,
                        dp_c5 = 8.0 / 9.0;
}  // namespace detail

/// Integrates y' = rhs(t, y) from t0 to t1 in place with the Dormand-Prince
/// 5(4) embedded pair, PI-free step control (scale = 0.9 err^{-1/5} clamped to
/// [1/3, 6]) and first-same-as-last reuse.
///
/// After each accepted step `post_step(t, y)` runs; it may adjust y (for
/// instance renormalize simplex rows) and must return true iff it changed y,
/// so the cached end-slope can be refreshed.
///
///// @throws std::runtime_error on step-size underflow (message carries the time
///         reached) or when the step budget is exhausted.
template <typename Rhs, typename PostStep>
inline void integrate_ode(Rhs&& rhs, Vector& y, double t0, double t1, const OdeOptions& opts,
                          PostStep&& post_step) {
  using namespace detail;
  if (t1 <= t0) return;
  const auto n = y.size();
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ynew(n), yerr(n), stage(n);
  double t = t0;
  double h = std::min(opts.initial_step, t1 - t0);
  rhs(t, y, k1);
  bool have_k1 = true;
  for (long step = 0; step < opts.max_steps; ++step) {
    if (t >= t1) return;
    h = std::min(h, t1 - t);
    if (h < opts.min_step)
      throw std::runtime_error("ODE step size underflow at t=" + std::to_string(t));
    if (!have_k1) {
      rhs(t, y, k1);
      have_k1 = true;
    }
    stage = y + h * (dp_a21 * k1);
    rhs(t + dp_c2 * h, stage, k2);
    stage = y + h * (dp_a31 * k1 + dp_a32 * k2);
    rhs(t + dp_c3 * h, stage, k3);
    stage = y + h * (dp_a41 * k1 + dp_a42 * k2 + dp_a43 * k3);
    rhs(t + dp_c4 * h, stage, k4);
    stage = y + h * (dp_a51 * k1 + dp_a52 * k2 + dp_a53 * k3 + dp_a54 * k4);
    rhs(t + dp_c5 * h, stage, k5);
    stage = y + h * (dp_a61 * k1 + dp_a62 * k2 + dp_a63 * k3 + dp_a64 * k4 + dp_a65 * k5);
    rhs(t + h, stage, k6);
    ynew = y + h * (dp_b1 * k1 + dp_b3 * k3 + dp_b4 * k4 + dp_b5 * k5 + dp_b6 * k6);
    rhs(t + h, ynew, k7);
    yerr = ynew - (y + h * (dp_e1 * k1 + dp_e3 * k3 + dp_e4 * k4 + dp_e5 * k5 + dp_e6 * k6 +
                            dp_e7 * k7));
    double err = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double scale =
          opts.abs_tol + opts.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double e = yerr[i] / scale;
      err += e * e;
    }
    err = std::sqrt(err / static_cast<double>(n));
    if (!std::isfinite(err)) {
      h /= 3.0;  // non-finite estimate: reject and shrink hard
      continue;
    }
    if (err <= 1.0) {
      t += h;
      y = ynew;
      k1 = k7;  // first-same-as-last
      if (post_step(t, y)) have_k1 = false;
    }
    const double scale =
        err <= 0.0 ? 6.0 : std::clamp(0.9 * std::pow(err, -0.2), 1.0 / 3.0, 6.0);
    h *= scale;
  }
  throw std::runtime_error("ODE integration exceeded the step budget at t=" + std::to_string(t));
}

template <typename Rhs>
inline void integrate_ode(Rhs&& rhs, Vector& y, double t0, double t1, const OdeOptions& opts) {
  integrate_ode(std::forward<Rhs>(rhs), y, t0, t1, opts,
                [](double, Vector&) { return false; });
}

}  // namespace entroflow
