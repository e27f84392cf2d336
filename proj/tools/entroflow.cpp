// entroflow: numerical laboratory for entropy-regularized reward optimization
// in finite discounted Markov decision processes.
// SPDX-License-Identifier: MIT
//
// Command-line front end: instance generation, experiment orchestration, and
// CSV/JSON emission for offline analysis.
//
// Exit codes: 0 success, 1 usage error, 2 IO error, 3 certificate violation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "entroflow/bounds.hpp"
#include "entroflow/csvio.hpp"
#include "entroflow/flow.hpp"
#include "entroflow/generators.hpp"
#include "entroflow/npg.hpp"
#include "entroflow/soft_solver.hpp"

namespace {

using entroflow::BoundContext;
using entroflow::BoundReport;
using entroflow::FlowTrajectory;
using entroflow::Matrix;
using entroflow::MdpInstance;
using entroflow::NpgRun;
using entroflow::Vector;

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CertificateFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Options shared by every subcommand.  Values may come from a JSON config
// file (flat object keyed by long flag names without the leading dashes);
// command-line flags override config values because the config is applied as
// the option default before parsing.
struct CommonOpts {
  std::string mdp_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  double tol = -1.0;  // negative = module default
  double gamma_override = -1.0;
};

nlohmann::json preload_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream f(argv[i + 1]);
      if (!f) throw IoFailure(std::string("cannot open config: ") + argv[i + 1]);
      try {
        return nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw IoFailure(std::string("malformed config JSON: ") + e.what());
      }
    }
  }
  return nlohmann::json::object();
}

template <typename T>
T cfg_or(const nlohmann::json& cfg, const std::string& key, T fallback) {
  if (cfg.contains(key)) return cfg.at(key).get<T>();
  return fallback;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw CLI::ValidationError("empty numeric list: " + text);
  return out;
}

Vector make_time_grid(double t_min, double t_max, int points, const std::string& kind) {
  if (points < 1) throw CLI::ValidationError("--points must be positive");
  if (!(t_max > 0.0) || t_max < t_min) throw CLI::ValidationError("bad time range");
  Vector grid(points);
  if (points == 1) {
    grid[0] = t_max;
    return grid;
  }
  if (kind == "linear") {
    for (int i = 0; i < points; ++i)
      grid[i] = t_min + (t_max - t_min) * static_cast<double>(i) / (points - 1);
  } else if (kind == "geometric") {
    if (!(t_min > 0.0)) throw CLI::ValidationError("geometric grid needs t-min > 0");
    const double ratio = std::log(t_max / t_min);
    for (int i = 0; i < points; ++i)
      grid[i] = t_min * std::exp(ratio * static_cast<double>(i) / (points - 1));
    grid[points - 1] = t_max;  // do not let rounding shift the endpoint
  } else {
    throw CLI::ValidationError("--grid must be linear or geometric");
  }
  return grid;
}

MdpInstance load_instance(const CommonOpts& opts) {
  if (opts.mdp_path.empty()) throw CLI::ValidationError("--mdp is required");
  MdpInstance m;
  try {
    m = entroflow::load_mdp(opts.mdp_path);
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("malformed JSON in " + opts.mdp_path + ": " + e.what());
  } catch (const std::exception& e) {
    throw IoFailure(std::string(e.what()));
  }
  if (opts.gamma_override >= 0.0) {
    m.gamma = opts.gamma_override;
    m = entroflow::validate_mdp(std::move(m));
  }
  return m;
}

std::filesystem::path ensure_out_dir(const CommonOpts& opts) {
  if (opts.out_dir.empty()) throw CLI::ValidationError("--out is required");
  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec) throw IoFailure("cannot create output directory: " + opts.out_dir);
  return opts.out_dir;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  entroflow::write_text(path.string(), j.dump(2) + "\n");
}

int finish_with_report(const std::filesystem::path& dir, const BoundReport& report) {
  write_json_file(dir / "report.json", entroflow::bound_report_json(report));
  entroflow::write_csv((dir / "report_rows.csv").string(),
                       entroflow::bound_report_table(report));
  std::cout << "verdict: " << (report.pass ? "pass" : "fail") << "\n";
  if (!report.pass) throw CertificateFailure("at least one certified bound failed");
  return 0;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int s = 0; s < m.rows(); ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < m.cols(); ++a) row.push_back(m(s, a));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

// ---------------------------------------------------------------------------
// gen

int run_gen(const CommonOpts& opts, const std::string& kind, int states, int actions,
            int branching, double reward, const std::string& rewards_text) {
  MdpInstance m;
  if (kind == "fig1-twocycle") {
    m = entroflow::make_two_cycle(0.9, reward);
  } else if (kind == "bandit") {
    const std::vector<double> rs = parse_double_list(rewards_text);
    Vector r(static_cast<Eigen::Index>(rs.size()));
    for (std::size_t i = 0; i < rs.size(); ++i) r[static_cast<Eigen::Index>(i)] = rs[i];
    m = entroflow::make_bandit(r);
  } else if (kind == "chain") {
    m = entroflow::make_chain(states);
  } else if (kind == "garnet") {
    m = entroflow::make_garnet(states, actions, branching, opts.seed);
  } else {
    throw CLI::ValidationError("unknown kind: " + kind);
  }
  if (opts.gamma_override >= 0.0) {
    m.gamma = opts.gamma_override;
    m = entroflow::validate_mdp(std::move(m));
  }
  const std::filesystem::path dir = ensure_out_dir(opts);
  entroflow::save_mdp(m, (dir / "instance.json").string());
  std::cout << "wrote " << (dir / "instance.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// solve

int run_solve(const CommonOpts& opts, double tau) {
  const MdpInstance m = load_instance(opts);
  const Matrix pi0 = entroflow::uniform_policy(m);
  const entroflow::RegularizedSolution sol =
      entroflow::solve_entropy_regularized(m, pi0, tau, opts.tol);
  nlohmann::json j;
  j["tau"] = sol.tau;
  j["pi_star_tau"] = matrix_json(sol.pi_star_tau);
  j["v_tau"] = vector_json(sol.v_tau);
  j["q_tau"] = matrix_json(sol.q_tau);
  j["residual"] = sol.residual;
  j["iterations"] = sol.iterations;
  std::cout << j.dump(2) << "\n";
  if (!opts.out_dir.empty()) write_json_file(ensure_out_dir(opts) / "solution.json", j);
  return 0;
}

// ---------------------------------------------------------------------------
// flow / sigma-flow

int run_flow(const CommonOpts& opts, double t_min, double t_max, int points,
             const std::string& grid_kind, std::optional<double> sigma) {
  const MdpInstance m = load_instance(opts);
  const Matrix pi0 = entroflow::uniform_policy(m);
  const Vector grid = make_time_grid(t_min, t_max, points, grid_kind);
  const double ode_tol = opts.tol > 0.0 ? opts.tol : 1e-10;
  BoundContext ctx = entroflow::make_bound_context(m, pi0);
  FlowTrajectory traj;
  BoundReport report;
  if (sigma) {
    const entroflow::SigmaRegularizer reg(*sigma);
    traj = entroflow::integrate_sigma_flow(m, reg, pi0, grid, ode_tol);
    report = entroflow::certify_sigma_trajectory(m, ctx, reg, traj);
  } else {
    traj = entroflow::integrate_kakade_flow(m, pi0, grid, ode_tol);
    report = entroflow::certify_flow_trajectory(m, ctx, traj);
    entroflow::annotate_central_path(m, pi0, traj);
  }
  const std::filesystem::path dir = ensure_out_dir(opts);
  entroflow::write_csv((dir / "trajectory.csv").string(),
                       entroflow::flow_csv_table(m, ctx, traj, !sigma.has_value()));
  return finish_with_report(dir, report);
}

// ---------------------------------------------------------------------------
// npg / npg-reg

int run_npg(const CommonOpts& opts, double eta, int iters, std::optional<double> tau) {
  const MdpInstance m = load_instance(opts);
  const Matrix pi0 = entroflow::uniform_policy(m);
  BoundContext ctx = entroflow::make_bound_context(m, pi0, eta);
  NpgRun run;
  BoundReport report;
  if (tau) {
    run = entroflow::npg_run_regularized(m, eta, *tau, iters);
    report = entroflow::certify_regularized_run(m, ctx, run);
  } else {
    run = entroflow::npg_run_unregularized(m, pi0, eta, iters);
    report = entroflow::certify_npg_run(m, ctx, run);
  }
  const std::filesystem::path dir = ensure_out_dir(opts);
  entroflow::write_csv((dir / "iterations.csv").string(),
                       entroflow::npg_csv_table(m, ctx, run));
  return finish_with_report(dir, report);
}

// ---------------------------------------------------------------------------
// bounds: certification entry point over a chosen pipeline

int run_bounds(const CommonOpts& opts, const std::string& mode, double t_min, double t_max,
               int points, const std::string& grid_kind, double eta, double tau, double sigma,
               int iters, const std::string& tau_grid_text) {
  if (mode == "flow" || mode == "sigma-flow") {
    const std::optional<double> sg =
        mode == "sigma-flow" ? std::optional<double>(sigma) : std::nullopt;
    return run_flow(opts, t_min, t_max, points, grid_kind, sg);
  }
  if (mode == "npg") return run_npg(opts, eta, iters, std::nullopt);
  if (mode == "npg-reg") return run_npg(opts, eta, iters, tau);
  if (mode == "prop23") {
    const MdpInstance m = load_instance(opts);
    const BoundReport report = entroflow::prop23_check(m, entroflow::uniform_policy(m),
                                                       parse_double_list(tau_grid_text));
    return finish_with_report(ensure_out_dir(opts), report);
  }
  throw CLI::ValidationError("unknown mode: " + mode);
}

// ---------------------------------------------------------------------------
// sweep: regularized NPG over an (eta, k) grid with the tau = sqrt(2 Delta /
// (eta k)) schedule; each cell is pure and cells are processed in
// deterministic order (optionally by a small worker pool).

struct SweepCell {
  double eta = 0.0;
  int k = 0;
  double tau = 0.0;
  double gap = entroflow::quiet_nan;
  double bound = entroflow::quiet_nan;
  bool admissible = false;
  bool pass = true;
};

int run_sweep(const CommonOpts& opts, const std::string& eta_grid_text,
              const std::string& k_grid_text, int jobs) {
  const MdpInstance m = load_instance(opts);
  const Matrix pi0 = entroflow::uniform_policy(m);
  BoundContext ctx = entroflow::make_bound_context(m, pi0);
  entroflow::detail::require_finite_delta(ctx.consts);
  const std::vector<double> etas = parse_double_list(eta_grid_text);
  std::vector<int> ks;
  for (const double k : parse_double_list(k_grid_text)) ks.push_back(static_cast<int>(k));

  std::vector<SweepCell> cells;
  for (const double eta : etas)
    for (const int k : ks) {
      SweepCell cell;
      cell.eta = eta;
      cell.k = k;
      cell.tau = std::min(1.0, std::sqrt(2.0 * ctx.consts.delta / (eta * k)));
      cell.admissible = eta <= (1.0 - m.gamma) / cell.tau + 1e-15 && k >= 2;
      cells.push_back(cell);
    }

  const auto run_cell = [&](SweepCell& cell) {
    if (!cell.admissible) return;
    const NpgRun run = entroflow::npg_run_regularized(m, cell.eta, cell.tau, cell.k);
    const entroflow::RegularizedSolution star =
        entroflow::solve_entropy_regularized(m, pi0, cell.tau);
    entroflow::BoundConstants consts = ctx.consts;
    consts.c_cen =
        entroflow::regularized_run_constant(m, star, run.iterates.front(), cell.eta, cell.tau);
    cell.gap = entroflow::optimality_gap(m, ctx.opt, run.iterates.back());
    cell.bound = entroflow::thm61_overall(consts, m.n_states, cell.k - 1, cell.eta, cell.tau);
    cell.pass = cell.gap <= cell.bound + entroflow::cert_tolerance(m);
  };

  if (jobs <= 1) {
    for (SweepCell& cell : cells) run_cell(cell);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < cells.size();
             i += static_cast<std::size_t>(jobs))
          run_cell(cells[i]);
      });
    for (std::thread& t : pool) t.join();
  }

  entroflow::CsvTable table;
  table.header = {"eta", "k", "tau", "gap", "bound", "margin", "admissible", "pass"};
  bool all_pass = true;
  for (const SweepCell& cell : cells) {
    table.push_numeric({cell.eta, static_cast<double>(cell.k), cell.tau, cell.gap, cell.bound,
                        cell.bound - cell.gap, cell.admissible ? 1.0 : 0.0,
                        cell.pass ? 1.0 : 0.0});
    all_pass = all_pass && cell.pass;
  }
  const std::filesystem::path dir = ensure_out_dir(opts);
  entroflow::write_csv((dir / "sweep.csv").string(), table);
  std::cout << "verdict: " << (all_pass ? "pass" : "fail") << "\n";
  if (!all_pass) throw CertificateFailure("at least one sweep cell violated its bound");
  return 0;
}

// ---------------------------------------------------------------------------

int dispatch(int argc, char** argv) {
  const nlohmann::json cfg = preload_config(argc, argv);

  CLI::App app{"Numerical laboratory for entropy-regularized reward optimization in finite "
               "discounted MDPs: gradient flows, NPG iterations, and certified bounds."};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override its values)");

  CommonOpts opts;
  opts.mdp_path = cfg_or<std::string>(cfg, "mdp", "");
  opts.out_dir = cfg_or<std::string>(cfg, "out", "");
  opts.seed = cfg_or<std::uint64_t>(cfg, "seed", 0);
  opts.tol = cfg_or<double>(cfg, "tol", -1.0);
  opts.gamma_override = cfg_or<double>(cfg, "gamma-override", -1.0);
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (flags override its values)");
    sub->add_option("--mdp", opts.mdp_path, "instance JSON path");
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--seed", opts.seed, "generator seed");
    sub->add_option("--tol", opts.tol, "tolerance override (module default if unset)");
    sub->add_option("--gamma-override", opts.gamma_override, "replace the discount factor");
  };

  // gen
  auto* gen = app.add_subcommand("gen", "generate an instance JSON");
  std::string kind = cfg_or<std::string>(cfg, "kind", "fig1-twocycle");
  int states = cfg_or<int>(cfg, "states", 5);
  int actions = cfg_or<int>(cfg, "actions", 3);
  int branching = cfg_or<int>(cfg, "branching", 2);
  double gen_reward = cfg_or<double>(cfg, "reward", 1.0);
  std::string rewards_text = cfg_or<std::string>(cfg, "rewards", "1,0.5,0");
  gen->add_option("--kind", kind, "fig1-twocycle | bandit | garnet | chain");
  gen->add_option("--states", states, "state count (garnet, chain)");
  gen->add_option("--actions", actions, "action count (garnet)");
  gen->add_option("--branching", branching, "kernel support size (garnet)");
  gen->add_option("--reward", gen_reward, "cycle reward (fig1-twocycle)");
  gen->add_option("--rewards", rewards_text, "comma-separated arm rewards (bandit)");
  add_common(gen);

  // solve
  auto* solve = app.add_subcommand("solve", "solve the entropy-regularized problem");
  double tau = cfg_or<double>(cfg, "tau", 1.0);
  solve->add_option("--tau", tau, "temperature (> 0)");
  add_common(solve);

  // flow / sigma-flow
  auto* flow = app.add_subcommand("flow", "integrate the policy gradient flow");
  auto* sigma_flow = app.add_subcommand("sigma-flow", "integrate the sigma-regularized flow");
  double t_min = cfg_or<double>(cfg, "t-min", 1.0);
  double t_max = cfg_or<double>(cfg, "t-max", 50.0);
  int points = cfg_or<int>(cfg, "points", 25);
  std::string grid_kind = cfg_or<std::string>(cfg, "grid", "geometric");
  double sigma = cfg_or<double>(cfg, "sigma", 2.0);
  for (CLI::App* sub : {flow, sigma_flow}) {
    sub->add_option("--t-min", t_min, "first sample time");
    sub->add_option("--t-max", t_max, "last sample time");
    sub->add_option("--points", points, "samples on the grid");
    sub->add_option("--grid", grid_kind, "linear | geometric");
    add_common(sub);
  }
  sigma_flow->add_option("--sigma", sigma, "regularizer exponent (> 1)");

  // npg / npg-reg
  auto* npg = app.add_subcommand("npg", "run natural policy gradient iterations");
  auto* npg_reg = app.add_subcommand("npg-reg", "run regularized NPG iterations");
  double eta = cfg_or<double>(cfg, "eta", 1.0);
  int iters = cfg_or<int>(cfg, "iters", 200);
  for (CLI::App* sub : {npg, npg_reg}) {
    sub->add_option("--eta", eta, "stepsize");
    sub->add_option("--iters", iters, "iteration count");
    add_common(sub);
  }
  npg_reg->add_option("--tau", tau, "temperature (> 0)");

  // bounds
  auto* bounds = app.add_subcommand("bounds", "run a pipeline and certify its bounds");
  std::string mode = cfg_or<std::string>(cfg, "mode", "flow");
  std::string tau_grid_text = cfg_or<std::string>(cfg, "tau-grid", "1,0.5,0.2,0.1,0.05,0.02");
  bounds->add_option("--mode", mode, "flow | sigma-flow | npg | npg-reg | prop23");
  bounds->add_option("--t-min", t_min, "first sample time (flow modes)");
  bounds->add_option("--t-max", t_max, "last sample time (flow modes)");
  bounds->add_option("--points", points, "samples on the grid (flow modes)");
  bounds->add_option("--grid", grid_kind, "linear | geometric (flow modes)");
  bounds->add_option("--eta", eta, "stepsize (npg modes)");
  bounds->add_option("--tau", tau, "temperature (npg-reg)");
  bounds->add_option("--sigma", sigma, "regularizer exponent (sigma-flow)");
  bounds->add_option("--iters", iters, "iteration count (npg modes)");
  bounds->add_option("--tau-grid", tau_grid_text, "temperatures (prop23)");
  add_common(bounds);

  // sweep
  auto* sweep = app.add_subcommand(
      "sweep", "regularized NPG over an (eta, k) grid with the matched temperature schedule");
  std::string eta_grid_text = cfg_or<std::string>(
      cfg, "eta-grid", "0.05,0.07,0.1,0.14,0.2,0.28,0.4,0.56,0.8,1.1,1.6,2.2");
  std::string k_grid_text =
      cfg_or<std::string>(cfg, "k-grid", "16,32,64,128,256,512,1024,2048,4096");
  int jobs = cfg_or<int>(cfg, "jobs", 1);
  sweep->add_option("--eta-grid", eta_grid_text, "comma-separated stepsizes");
  sweep->add_option("--k-grid", k_grid_text, "comma-separated iteration budgets");
  sweep->add_option("--jobs", jobs, "worker threads (cells are independent)");
  add_common(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the error message
    return code == 0 ? 0 : 1;
  }

  if (gen->parsed())
    return run_gen(opts, kind, states, actions, branching, gen_reward, rewards_text);
  if (solve->parsed()) return run_solve(opts, tau);
  if (flow->parsed()) return run_flow(opts, t_min, t_max, points, grid_kind, std::nullopt);
  if (sigma_flow->parsed()) return run_flow(opts, t_min, t_max, points, grid_kind, sigma);
  if (npg->parsed()) return run_npg(opts, eta, iters, std::nullopt);
  if (npg_reg->parsed()) return run_npg(opts, eta, iters, tau);
  if (bounds->parsed())
    return run_bounds(opts, mode, t_min, t_max, points, grid_kind, eta, tau, sigma, iters,
                      tau_grid_text);
  if (sweep->parsed()) return run_sweep(opts, eta_grid_text, k_grid_text, jobs);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Validation errors raised after parsing (bad parameter combinations).
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const IoFailure& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const CertificateFailure& e) {
    std::cerr << "certificate failure: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    // Enforcement failures inside the numerical pipelines surface here.
    std::cerr << "certificate failure: " << e.what() << "\n";
    return 3;
  }
}
