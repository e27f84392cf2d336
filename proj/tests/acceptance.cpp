// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
//
// End-to-end acceptance battery.  Each criterion prints exactly one line with
// its pinned tolerance and the worst measured value; the process exits
// non-zero when any criterion fails.
//
// Windowing for rate fits: the exponential upper bound gives the principled
// start of the post-asymptotic window, but its polynomial prefactor is loose
// enough that on slowly mixing instances the designed start lies past the
// point where the measured gap sinks into value-solve noise (~1e-14 relative).
// When that happens the fit falls back to the measured window [first point
// below 1% of the initial gap, last point above 100x the noise floor], the
// same fallback rule npg_fit_start applies.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "entroflow/bounds.hpp"
#include "entroflow/divergence.hpp"
#include "entroflow/evaluate.hpp"
#include "entroflow/flow.hpp"
#include "entroflow/generators.hpp"
#include "entroflow/mdp.hpp"
#include "entroflow/npg.hpp"
#include "entroflow/rng.hpp"
#include "entroflow/sigma.hpp"
#include "entroflow/soft_solver.hpp"

namespace {

using namespace entroflow;

std::string sci(double x) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << x;
  return os.str();
}

Vector geometric_times(double t_min, double t_max, int n) {
  Vector t(n);
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / (n - 1);
    t[i] = std::exp(std::log(t_min) + u * (std::log(t_max) - std::log(t_min)));
  }
  t[0] = t_min;
  t[n - 1] = t_max;
  return t;
}

/// Gap values a fit may trust: two orders of magnitude above the noise left
/// by the linear value solves behind R* and R(pi).
double gap_floor(const MdpInstance& m) { return 1e-11 * (1.0 + m.reward_sup()); }

// ---------------------------------------------------------------------------
// Shared flow artifacts: the two-cycle instance plus five admissible Garnet
// instances, each integrated on a geometric grid reaching past the designed
// post-asymptotic window.

struct FlowArt {
  std::string name;
  MdpInstance m;
  BoundContext ctx;
  FlowTrajectory traj;
  std::vector<double> gaps;  ///< R* - R(pi_t) per grid point
  double gap0 = 0.0;
};

/// Garnet admission for rate fitting: a finite gap bounded away from zero,
/// and no second decay mode close enough to the slowest one to contaminate
/// the fitted slope (every normalized advantage gap within 5% of delta or at
/// least 1.5x delta).
bool garnet_admissible(const MdpInstance& m) {
  const OptimalStructure opt = optimal_structure(m);
  if (!opt.delta.has_value()) return false;
  const double delta = *opt.delta;
  if (delta < 0.05) return false;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      if (opt.is_optimal(s, a)) continue;
      const double g = -opt.bundle.adv(s, a) / (1.0 - m.gamma);
      if (g > 1.05 * delta && g < 1.5 * delta) return false;
    }
  return check_state_exploration(m);
}

FlowArt build_flow_art(std::string name, const MdpInstance& m) {
  FlowArt art;
  art.name = std::move(name);
  art.m = m;
  const Matrix unif = uniform_policy(m);
  art.ctx = make_bound_context(m, unif);
  art.gap0 = art.ctx.opt.r_star - reward_of(m, unif);

  double t_design = 0.0;
  for (int t = 1; t <= 100000; ++t)
    if (thm42_bounds(art.ctx.consts, t, 0.0).upper < 0.1 * art.gap0) {
      t_design = t;
      break;
    }
  if (t_design == 0.0) throw std::runtime_error(art.name + ": no designed window below t=1e5");
  const double t_max = std::clamp(2.0 * t_design, 60.0, 600.0);

  art.traj = integrate_kakade_flow(m, unif, geometric_times(1.0, t_max, 120), 1e-10);
  art.traj.reward_gap.resize(art.traj.times.size());
  art.traj.dk_to_pistar.resize(art.traj.times.size());
  for (Eigen::Index i = 0; i < art.traj.times.size(); ++i) {
    art.traj.reward_gap[i] = art.ctx.opt.r_star - art.traj.rewards[i];
    art.traj.dk_to_pistar[i] =
        kakade_divergence(m, art.ctx.pi_star, art.traj.policies[static_cast<std::size_t>(i)]);
    art.gaps.push_back(art.traj.reward_gap[i]);
  }
  return art;
}

const std::vector<FlowArt>& flow_arts() {
  static const std::vector<FlowArt> arts = [] {
    std::vector<FlowArt> out;
    out.push_back(build_flow_art("two-cycle", make_two_cycle()));
    int accepted = 0;
    for (std::uint64_t seed = 1; seed <= 200 && accepted < 5; ++seed) {
      const MdpInstance g = make_garnet(5, 3, 2, seed, 0.8);
      if (!garnet_admissible(g)) continue;
      out.push_back(build_flow_art("garnet-" + std::to_string(seed), g));
      ++accepted;
    }
    if (accepted < 5) throw std::runtime_error("fewer than five admissible Garnet instances");
    return out;
  }();
  return arts;
}

/// Post-asymptotic fit window over a gap sequence: designed start when it
/// leaves >= 10 usable points, measured fallback otherwise (see file header).
struct FitWindow {
  int start = 0;
  int end = 0;  ///< inclusive
};

FitWindow fit_window(const std::vector<double>& gaps, int designed_start, double gap0,
                     double floor) {
  FitWindow w;
  w.end = -1;
  for (int i = 0; i < static_cast<int>(gaps.size()); ++i)
    if (gaps[static_cast<std::size_t>(i)] >= floor) w.end = i;
  if (w.end < 0) throw std::runtime_error("every gap is below the measurement floor");
  if (designed_start <= w.end - 9) {
    w.start = designed_start;
    return w;
  }
  w.start = w.end;
  for (int i = 0; i <= w.end; ++i)
    if (gaps[static_cast<std::size_t>(i)] <= 0.01 * gap0) {
      w.start = i;
      break;
    }
  w.start = std::min(w.start, w.end - 9);
  if (w.start < 0) throw std::runtime_error("fit window has fewer than 10 points");
  return w;
}

RateFit windowed_exponential_fit(const std::vector<double>& xs, const std::vector<double>& gaps,
                                 const FitWindow& w) {
  const std::vector<double> x(xs.begin() + w.start, xs.begin() + w.end + 1);
  const std::vector<double> y(gaps.begin() + w.start, gaps.begin() + w.end + 1);
  return rate_fit(x, y, FitModel::log_linear);
}

// ---------------------------------------------------------------------------
// Criterion bodies.  Each returns pass/fail and fills a short detail string.

bool gradient_matches_finite_differences(std::string& detail) {
  const double h = 1e-6;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const MdpInstance m = make_garnet(6, 4, 3, seed, 0.9);
    Rng rng(1000 + seed);
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix pi = rng.interior_policy(m.n_states, m.n_actions);
      const Matrix w = rng.tangent_field(m.n_states, m.n_actions);
      const double analytic = kakade_inner(m, pi, kakade_gradient(m, pi), w);
      const double fd = (reward_of(m, pi + h * w) - reward_of(m, pi - h * w)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-12));
    }
  }
  detail = "1000 cases, max rel err " + sci(worst) + " (tol 1e-05)";
  return worst <= 1e-5;
}

bool flow_tracks_central_path(std::string& detail) {
  double worst = 0.0;
  for (const MdpInstance& m : {make_two_cycle(), make_bandit3()})
    for (const double t : {1.0, 2.0, 5.0, 10.0})
      worst = std::max(worst, central_path_check(m, uniform_policy(m), t, 1e-12, 1e-13));
  detail = "max state KL " + sci(worst) + " (tol 1e-05)";
  return worst <= 1e-5;
}

bool flow_gap_rate_and_sandwich(std::string& detail) {
  double worst_violation = -std::numeric_limits<double>::infinity();
  double worst_slope_err = 0.0;
  for (const FlowArt& art : flow_arts()) {
    const double tol = cert_tolerance(art.m);
    for (Eigen::Index i = 0; i < art.traj.times.size(); ++i) {
      const double t = art.traj.times[i];
      const double off = min_state_offmass(art.m, art.ctx.opt,
                                           art.traj.policies[static_cast<std::size_t>(i)],
                                           art.ctx.pi0);
      const BoundPair b = thm42_bounds(art.ctx.consts, t, off);
      const double gap = art.gaps[static_cast<std::size_t>(i)];
      worst_violation = std::max({worst_violation, gap - b.upper - tol, b.lower - gap - tol});
    }
    const int designed =
        static_cast<int>(flow_fit_start(art.ctx, art.m, art.traj.times, art.gap0));
    const FitWindow w = fit_window(art.gaps, designed, art.gap0, gap_floor(art.m));
    const std::vector<double> ts(art.traj.times.data(),
                                 art.traj.times.data() + art.traj.times.size());
    const RateFit fit = windowed_exponential_fit(ts, art.gaps, w);
    const double delta = art.ctx.consts.delta;
    worst_slope_err = std::max(worst_slope_err, std::abs(fit.slope + delta) / delta);
  }
  detail = "slope err " + sci(worst_slope_err) + " (tol 0.1), sandwich margin " +
           sci(worst_violation);
  return worst_slope_err <= 0.1 && worst_violation <= 0.0;
}

bool flow_policy_error_and_implicit_bias(std::string& detail) {
  double worst_violation = -std::numeric_limits<double>::infinity();
  for (const FlowArt& art : flow_arts()) {
    const double tol = cert_tolerance(art.m);
    for (Eigen::Index i = 0; i < art.traj.times.size(); ++i) {
      const BoundPair b = thm44_bounds(art.ctx.consts, art.traj.times[i]);
      const double dk = art.traj.dk_to_pistar[i];
      if (std::isfinite(b.upper)) worst_violation = std::max(worst_violation, dk - b.upper - tol);
      worst_violation = std::max(worst_violation, b.lower - dk - tol);
    }
  }

  double worst_dk = 0.0;
  double worst_entry = 0.0;
  std::vector<std::pair<std::string, MdpInstance>> cases{{"two-cycle", make_two_cycle()},
                                                         {"bandit", make_bandit3()}};
  for (const FlowArt& art : flow_arts())
    if (art.name != "two-cycle") cases.emplace_back(art.name, art.m);
  for (const auto& [name, m] : cases) {
    const Matrix unif = uniform_policy(m);
    const BoundContext ctx = make_bound_context(m, unif);
    const double t_final = 40.0 / ctx.consts.delta;
    const ImplicitBiasResult res = implicit_bias_check(m, unif, t_final);
    worst_dk = std::max(worst_dk, res.dk_to_limit);
    Vector grid(1);
    grid << t_final;
    const Matrix pi_t = integrate_kakade_flow(m, unif, grid, 1e-10).policies.front();
    worst_entry = std::max(worst_entry, (pi_t - ctx.pi_star).cwiseAbs().maxCoeff());
  }
  detail = "sandwich margin " + sci(worst_violation) + ", limit dist " + sci(worst_dk) +
           ", entry " + sci(worst_entry) + " (tol 1e-04)";
  return worst_violation <= 0.0 && worst_dk <= 1e-4 && worst_entry <= 1e-4;
}

bool npg_guarantees_and_rate(std::string& detail) {
  const int k_max = 200;
  double worst_violation = -std::numeric_limits<double>::infinity();
  double worst_slope_err = 0.0;
  for (const MdpInstance& m : {make_two_cycle(), make_bandit3()}) {
    const Matrix unif = uniform_policy(m);
    const double tol = cert_tolerance(m);
    for (const double eta : {0.1, 0.5, 1.0}) {
      const BoundContext ctx = make_bound_context(m, unif, eta);
      // The run itself throws unless every step satisfies the progress
      // inequality, monotone state values, and the sublinear value bound.
      const NpgRun run = npg_run_unregularized(m, unif, eta, k_max);
      std::vector<double> gaps;
      for (int k = 0; k <= k_max; ++k) gaps.push_back(ctx.opt.r_star - run.rewards[k]);
      for (int k = 1; k <= k_max; ++k) {
        const double off = min_state_offmass(m, ctx.opt,
                                             run.iterates[static_cast<std::size_t>(k)], unif);
        const BoundPair b = thm47_bounds(ctx.consts, k, eta, off);
        worst_violation = std::max({worst_violation,
                                    gaps[static_cast<std::size_t>(k)] - b.upper - tol,
                                    b.lower - gaps[static_cast<std::size_t>(k)] - tol});
      }
      const FitWindow w = fit_window(gaps, npg_fit_start(ctx, eta, gaps), gaps[0], gap_floor(m));
      std::vector<double> ks;
      for (int k = 0; k <= k_max; ++k) ks.push_back(static_cast<double>(k));
      const RateFit fit = windowed_exponential_fit(ks, gaps, w);
      const double rate = ctx.consts.delta * eta;
      worst_slope_err = std::max(worst_slope_err, std::abs(fit.slope + rate) / rate);
    }
  }
  detail = "slope err " + sci(worst_slope_err) + " (tol 0.1), sandwich margin " +
           sci(worst_violation);
  return worst_slope_err <= 0.1 && worst_violation <= 0.0;
}

bool projection_closed_form_and_pythagoras(std::string& detail) {
  Rng rng(7);
  double worst_kl = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 2;
    const Vector ref = rng.simplex_point(n, 0.5);
    std::vector<int> face;
    const int mask = 1 + rng.uniform_int((1 << n) - 1);
    for (int a = 0; a < n; ++a)
      if (mask & (1 << a)) face.push_back(a);
    const FaceProjection fp = face_information_projection(ref, face);

    const double h = 1e-3;
    double best = std::numeric_limits<double>::infinity();
    const auto xlogx = [](double x, double r) { return x > 0.0 ? x * std::log(x / r) : 0.0; };
    if (face.size() == 1) {
      best = -std::log(ref[face[0]]);
    } else if (face.size() == 2) {
      for (int i = 0; i <= 1000; ++i) {
        const double p = i * h;
        best = std::min(best, xlogx(p, ref[face[0]]) + xlogx(1.0 - p, ref[face[1]]));
      }
    } else {
      for (int i = 0; i <= 1000; ++i)
        for (int j = 0; j <= 1000 - i; ++j) {
          const double pa = i * h;
          const double pb = j * h;
          best = std::min(best, xlogx(pa, ref[0]) + xlogx(pb, ref[1]) +
                                    xlogx(1.0 - pa - pb, ref[2]));
        }
    }
    if (fp.kl > best + 1e-10) return detail = "closed form beaten by the grid", false;
    worst_kl = std::max(worst_kl, std::abs(best - fp.kl));
  }

  double worst_eq = 0.0;
  {
    Rng prng(31);
    const MdpInstance m = make_two_cycle();
    const Matrix pi0 = uniform_policy(m);
    const std::vector<std::vector<int>> faces{{0}, {0, 1}};
    for (int trial = 0; trial < 20; ++trial) {
      const double p = 0.05 + 0.9 * prng.uniform01();
      Matrix pi(2, 2);
      pi << 1.0, 0.0, p, 1.0 - p;
      worst_eq = std::max(worst_eq, std::abs(pythagoras_check(m, pi0, faces, pi).gap));
    }
  }
  double worst_ineq = 0.0;
  {
    Rng prng(37);
    const MdpInstance g = make_garnet(4, 3, 2, 63, 0.85);
    const std::vector<std::vector<int>> faces{{0, 1}, {1, 2}, {0, 2}, {0, 1, 2}};
    for (int trial = 0; trial < 20; ++trial) {
      Matrix pi = Matrix::Zero(4, 3);
      for (int s = 0; s < 4; ++s) {
        const Vector mass = prng.simplex_point(static_cast<int>(faces[s].size()), 0.02);
        for (std::size_t j = 0; j < faces[static_cast<std::size_t>(s)].size(); ++j)
          pi(s, faces[static_cast<std::size_t>(s)][j]) = mass[static_cast<Eigen::Index>(j)];
      }
      const double gap = pythagoras_check(g, prng.interior_policy(4, 3), faces, pi).gap;
      worst_ineq = std::min(worst_ineq, gap);
    }
  }
  detail = "KL err " + sci(worst_kl) + " (tol 1e-05), eq " + sci(worst_eq) + ", ineq " +
           sci(worst_ineq);
  return worst_kl <= 1e-5 && worst_eq <= 1e-6 && worst_ineq >= -1e-8;
}

bool sigma_rates_and_entry_bounds(std::string& detail) {
  const MdpInstance m = make_bandit3();
  const Matrix unif = uniform_policy(m);
  const BoundContext ctx = make_bound_context(m, unif);
  double worst_slope_err = 0.0;
  bool bounds_ok = true;
  for (const double sigma : {1.5, 2.0, 3.0}) {
    const SigmaRegularizer reg(sigma);
    FlowTrajectory traj = integrate_sigma_flow(m, reg, unif, geometric_times(1.0, 120.0, 140),
                                               1e-10);
    const BoundReport report = certify_sigma_trajectory(m, ctx, reg, traj);
    bounds_ok = bounds_ok && report.pass;
    const RateFit fit = sigma_rate_fit(traj, 10.0, 100.0);
    const double rate = 1.0 / (sigma - 1.0);
    worst_slope_err = std::max(worst_slope_err, std::abs(fit.slope + rate) / rate);
  }
  detail = "slope err " + sci(worst_slope_err) + " (tol 0.15), entry bounds " +
           (bounds_ok ? "hold" : "violated");
  return worst_slope_err <= 0.15 && bounds_ok;
}

bool schedule_sweep_overall_bound(std::string& detail) {
  const MdpInstance m = make_bandit3();
  const Matrix pi0 = uniform_policy(m);
  const BoundContext ctx = make_bound_context(m, pi0);
  const double delta = ctx.consts.delta;
  const std::vector<double> etas{0.05, 0.07, 0.1, 0.14, 0.2, 0.28, 0.4, 0.56, 0.8, 1.0, 1.6, 2.2};
  const std::vector<int> ks{16, 32, 64, 128, 256, 512, 1024, 2048, 4096};

  int cells = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  double gap_k6 = 0.0, gap_k12 = 0.0;
  for (const double eta : etas)
    for (const int k : ks) {
      const double tau = std::min(1.0, std::sqrt(2.0 * delta / (eta * k)));
      if (!(eta <= (1.0 - m.gamma) / tau + 1e-15 && k >= 2)) continue;
      ++cells;
      const NpgRun run = npg_run_regularized(m, eta, tau, k);
      const RegularizedSolution star = solve_entropy_regularized(m, pi0, tau);
      BoundConstants consts = ctx.consts;
      consts.c_cen = regularized_run_constant(m, star, run.iterates.front(), eta, tau);
      const double gap = optimality_gap(m, ctx.opt, run.iterates.back());
      const double bound = thm61_overall(consts, m.n_states, k - 1, eta, tau);
      worst_margin = std::min(worst_margin, bound + cert_tolerance(m) - gap);
      if (eta == 1.0 && k == 64) gap_k6 = gap;
      if (eta == 1.0 && k == 4096) gap_k12 = gap;
    }

  const double predicted = std::exp(-(std::sqrt(delta * 4096.0 / 2.0) -
                                      std::sqrt(delta * 64.0 / 2.0)));
  const double ratio = gap_k12 / gap_k6;
  const double scaling = ratio / predicted;
  detail = std::to_string(cells) + " cells, min margin " + sci(worst_margin) +
           ", k-scaling x" + sci(scaling);
  return cells >= 100 && worst_margin >= 0.0 && gap_k12 < gap_k6 && scaling >= 0.1 &&
         scaling <= 10.0;
}

bool structural_identities(std::string& detail) {
  const double tol = 1e-10;
  double worst = 0.0;
  const std::vector<MdpInstance> instances{make_two_cycle(), make_bandit3(),
                                           make_garnet(6, 4, 3, 11, 0.9),
                                           make_garnet(10, 5, 3, 12, 0.7)};
  std::uint64_t seed = 100;
  for (const MdpInstance& m : instances) {
    Rng rng(++seed);
    const Matrix unif = uniform_policy(m);
    const OptimalStructure opt = optimal_structure(m);
    const Matrix pi_star = max_entropy_optimal_policy(m, unif);
    const double dk_star = kakade_divergence(m, pi_star, unif);
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix pi1 = rng.interior_policy(m.n_states, m.n_actions);
      const Matrix pi2 = rng.interior_policy(m.n_states, m.n_actions);
      const Occupancy o1 = occupancy_of(m, pi1);
      const Occupancy o2 = occupancy_of(m, pi2);

      // Kakade divergence is the conditional KL after the occupancy map.
      worst = std::max(worst,
                       std::abs(kakade_divergence(m, pi1, pi2) - conditional_kl(o1, o2)));
      // Chain rule: joint KL = marginal KL + conditional KL.
      const Eigen::Map<const Eigen::RowVectorXd> nu1(o1.nu.data(), o1.nu.size());
      const Eigen::Map<const Eigen::RowVectorXd> nu2(o2.nu.data(), o2.nu.size());
      const double joint = kl_divergence(nu1, nu2);
      const double marginal = kl_divergence(o1.d.transpose(), o2.d.transpose());
      worst = std::max(worst, std::abs(joint - marginal - conditional_kl(o1, o2)));
      // Performance difference identity.
      const auto [pd_lhs, pd_rhs] = performance_difference(m, pi1, pi2);
      worst = std::max(worst, std::abs(pd_lhs - pd_rhs));
      // Regularization error sandwich at a random temperature.
      const double tau = std::exp(std::log(0.01) + rng.uniform01() * std::log(200.0));
      const RegularizedSolution sol = solve_entropy_regularized(m, unif, tau);
      const double reg_gap = opt.r_star - reward_of(m, sol.pi_star_tau);
      worst = std::max({worst, -reg_gap, reg_gap - tau * dk_star});
      // Reward is Lipschitz in total variation.
      const BoundPair lip = reward_lipschitz_check(m, pi1, pi2);
      worst = std::max(worst, lip.lower - lip.upper);
      // Advantages are centered under their own policy.
      const ValueBundle b = evaluate_policy(m, pi1);
      worst = std::max(worst,
                       (b.adv.array() * pi1.array()).rowwise().sum().abs().maxCoeff());
      // State-action occupancies satisfy the polytope constraints.
      worst = std::max(worst, polytope_residual(m, o1.nu).cwiseAbs().maxCoeff());
    }
  }
  detail = "400 cases, worst residual " + sci(worst) + " (tol 1e-10)";
  return worst <= tol;
}

}  // namespace

int main() {
  struct Criterion {
    const char* label;
    std::function<bool(std::string&)> body;
  };
  const std::vector<Criterion> criteria{
      {"Kakade reward gradient vs central differences", gradient_matches_finite_differences},
      {"flow point vs inverse-time regularized optimizer", flow_tracks_central_path},
      {"flow value-gap sandwich and fitted exponential rate", flow_gap_rate_and_sandwich},
      {"flow policy-error sandwich and implicit-bias limit", flow_policy_error_and_implicit_bias},
      {"NPG guarantees, value sandwich, fitted rate", npg_guarantees_and_rate},
      {"face information projection and Pythagoras", projection_closed_form_and_pythagoras},
      {"sigma-flow algebraic rate and entry bounds", sigma_rates_and_entry_bounds},
      {"temperature-schedule sweep overall error bound", schedule_sweep_overall_bound},
      {"structural identities on random policies", structural_identities},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    std::string det;
    bool ok = false;
    try {
      ok = criteria[i].body(det);
    } catch (const std::exception& e) {
      det = e.what();
    }
    std::printf("[%zu/9] %-52s %s: %s\n", i + 1, criteria[i].label, det.c_str(),
                ok ? "pass" : "FAIL");
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
