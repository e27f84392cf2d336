// Regularized solvers: soft value iteration, regularized reward, divergence
// projection onto faces, maximum-entropy optimal policy, sigma potentials.
// SPDX-License-Identifier: MIT
#include <gtest/gtest.h>

#include <cmath>

#include "entroflow/divergence.hpp"
#include "entroflow/generators.hpp"
#include "entroflow/rng.hpp"
#include "entroflow/sigma.hpp"
#include "entroflow/soft_solver.hpp"
#include "test_util.hpp"

using namespace entroflow;

TEST(SoftSolver, BanditGibbsClosedForm) {
  const MdpInstance m = make_bandit3();
  const RegularizedSolution sol = solve_entropy_regularized(m, uniform_policy(m), 1.0);
  // gamma = 0: the solution is the Gibbs distribution of the rewards.
  Vector gibbs(3);
  gibbs << std::exp(1.0), std::exp(0.5), 1.0;
  gibbs /= gibbs.sum();
  EXPECT_LE((sol.pi_star_tau.row(0).transpose() - gibbs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(sol.pi_star_tau(0, 0), 0.50648039, 1e-7);
  EXPECT_NEAR(sol.pi_star_tau(0, 1), 0.30719589, 1e-7);
  EXPECT_NEAR(sol.pi_star_tau(0, 2), 0.18632372, 1e-7);
}

TEST(SoftSolver, LargeTauReturnsReference) {
  Rng rng(3);
  const MdpInstance g = make_garnet(5, 3, 2, 60, 0.9);
  const Matrix pi0 = rng.interior_policy(5, 3);
  const RegularizedSolution sol = solve_entropy_regularized(g, pi0, 1e6);
  EXPECT_LE((sol.pi_star_tau - pi0).cwiseAbs().maxCoeff(), 2e-5);
}

TEST(SoftSolver, SmallTauConcentratesOnOptimalActions) {
  const MdpInstance m = make_two_cycle();
  const OptimalStructure opt = optimal_structure(m);
  // tau = 1e-2 keeps the off-optimal mass ~ exp(-90): tiny but not underflowed.
  const RegularizedSolution sol = solve_entropy_regularized(m, uniform_policy(m), 1e-2);
  double off_mass = 0.0;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a)
      if (std::find(opt.optimal_actions[s].begin(), opt.optimal_actions[s].end(), a) ==
          opt.optimal_actions[s].end())
        off_mass = std::max(off_mass, sol.pi_star_tau(s, a));
  // Off-optimal mass decays like exp(-Delta/tau) up to polynomial factors.
  EXPECT_LE(off_mass, 1e-30);
  EXPECT_TRUE(is_interior(sol.pi_star_tau));
}

TEST(SoftSolver, FixedPointMatchesIndependentOperator) {
  // Re-derive the soft optimality operator in the test and check both the
  // contraction ratio of its residuals and the fixed point itself.
  const MdpInstance m = make_two_cycle();
  const Matrix pi0 = uniform_policy(m);
  const double tau = 0.7;
  const double beta = (1.0 - m.gamma) * tau;
  const auto apply = [&](const Vector& v) {
    Vector out(m.n_states);
    for (int s = 0; s < m.n_states; ++s) {
      double acc = 0.0;
      for (int a = 0; a < m.n_actions; ++a) {
        const double q =
            (1.0 - m.gamma) * m.reward(s, a) + m.gamma * m.transition[s].row(a).dot(v);
        acc += pi0(s, a) * std::exp(q / beta);
      }
      out[s] = beta * std::log(acc);
    }
    return out;
  };
  Vector v = Vector::Zero(m.n_states);
  double prev_resid = -1.0;
  for (int it = 0; it < 400; ++it) {
    const Vector vn = apply(v);
    const double resid = (vn - v).cwiseAbs().maxCoeff();
    // Check the contraction ratio only while residuals dominate rounding noise.
    if (prev_resid > 1e-8) EXPECT_LE(resid, (m.gamma + 1e-6) * prev_resid + 1e-15);
    prev_resid = resid;
    v = vn;
  }
  const RegularizedSolution sol = solve_entropy_regularized(m, pi0, tau);
  EXPECT_LE((sol.v_tau - v).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(sol.residual, soft_tolerance(m, tau));
}

TEST(SoftSolver, FirstOrderOptimality) {
  Rng rng(7);
  for (const auto& [m, tau] :
       {std::pair<MdpInstance, double>{make_two_cycle(), 0.7},
        std::pair<MdpInstance, double>{make_bandit3(), 0.3}}) {
    const Matrix pi0 = uniform_policy(m);
    const RegularizedSolution sol = solve_entropy_regularized(m, pi0, tau);
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix w = rng.tangent_field(m.n_states, m.n_actions);
      const double up = evaluate_regularized_reward(m, sol.pi_star_tau + h * w, pi0, tau);
      const double dn = evaluate_regularized_reward(m, sol.pi_star_tau - h * w, pi0, tau);
      EXPECT_LE(std::abs((up - dn) / (2.0 * h)), 1e-8);
    }
  }
}

TEST(SoftSolver, OptimalitySweep) {
  Rng rng(11);
  const MdpInstance m = make_two_cycle();
  const Matrix pi0 = uniform_policy(m);
  const double tau = 0.5;
  const RegularizedSolution sol = solve_entropy_regularized(m, pi0, tau);
  const double best = evaluate_regularized_reward(m, sol.pi_star_tau, pi0, tau);
  for (int trial = 0; trial < 100; ++trial)
    EXPECT_GE(best + 1e-12,
              evaluate_regularized_reward(m, rng.interior_policy(2, 2), pi0, tau));
}

TEST(RegularizedReward, Degenerations) {
  Rng rng(13);
  const MdpInstance g = make_garnet(4, 3, 2, 61, 0.8);
  const Matrix pi = rng.interior_policy(4, 3);
  const Matrix pi0 = rng.interior_policy(4, 3);
  EXPECT_NEAR(evaluate_regularized_reward(g, pi, pi0, 0.0), reward_of(g, pi), 1e-14);
  EXPECT_NEAR(evaluate_regularized_reward(g, pi0, pi0, 2.5), reward_of(g, pi0), 1e-14);
}

TEST(Projection, FullFacesReturnReference) {
  Rng rng(17);
  const MdpInstance g = make_garnet(4, 3, 2, 62, 0.85);
  const Matrix pi0 = rng.interior_policy(4, 3);
  const std::vector<std::vector<int>> faces(4, {0, 1, 2});
  EXPECT_LE((kakade_projection(g, pi0, faces) - pi0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, SingleStateMatchesFaceProjection) {
  Rng rng(19);
  const MdpInstance m = make_bandit3();
  const Matrix pi0 = rng.interior_policy(1, 3);
  const std::vector<int> face{0, 2};
  const Matrix pihat = kakade_projection(m, pi0, {face});
  const FaceProjection fp = face_information_projection(pi0.row(0).transpose(), face);
  EXPECT_LE((pihat.row(0).transpose() - fp.proj).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, TwoCycleGridOracle) {
  // Faces {a1} in s1 and {a1, a2} in s2 leave one free parameter
  // p = pi(a1|s2); scan it directly.
  const MdpInstance m = make_two_cycle();
  const Matrix pi0 = uniform_policy(m);
  const Matrix pihat = kakade_projection(m, pi0, {{0}, {0, 1}});
  EXPECT_NEAR(pihat(0, 0), 1.0, 1e-12);
  const double dk_hat = kakade_divergence(m, pihat, pi0);
  double best = 1e300, best_p = -1.0;
  for (int i = 1; i < 10000; ++i) {
    const double p = static_cast<double>(i) / 10000.0;
    Matrix pi(2, 2);
    pi << 1.0, 0.0, p, 1.0 - p;
    const double dk = kakade_divergence(m, pi, pi0);
    if (dk < best) {
      best = dk;
      best_p = p;
    }
  }
  EXPECT_NEAR(dk_hat, best, 1e-5);
  EXPECT_LE(dk_hat, best + 1e-10);  // the solver should not be beaten
  EXPECT_NEAR(pihat(1, 0), best_p, 2e-4);
  EXPECT_NEAR(pihat(1, 0), 0.16492095, 1e-6);
  EXPECT_NEAR(dk_hat, 0.6030327322, 1e-8);
}

TEST(Projection, PythagorasOnFaceClass) {
  Rng rng(23);
  const MdpInstance m = make_two_cycle();
  const Matrix pi0 = uniform_policy(m);
  const std::vector<std::vector<int>> faces{{0}, {0, 1}};
  for (int trial = 0; trial < 20; ++trial) {
    const double p = 0.05 + 0.9 * rng.uniform01();
    Matrix pi(2, 2);
    pi << 1.0, 0.0, p, 1.0 - p;
    const PythagorasResult res = pythagoras_check(m, pi0, faces, pi);
    EXPECT_GE(res.gap, -1e-8);
    EXPECT_LE(std::abs(res.gap), 1e-6);  // affine face class: equality
  }
  // pi = projection: exact zero.
  const Matrix pihat = kakade_projection(m, pi0, faces);
  const PythagorasResult at_hat = pythagoras_check(m, pi0, faces, pihat);
  EXPECT_NEAR(at_hat.gap, 0.0, 1e-10);
}

TEST(Projection, PythagorasInequalityOnRandomInstances) {
  Rng rng(29);
  const MdpInstance g = make_garnet(4, 3, 2, 63, 0.85);
  const std::vector<std::vector<int>> faces{{0, 1}, {1, 2}, {0, 2}, {0, 1, 2}};
  for (int trial = 0; trial < 20; ++trial) {
    Matrix pi = Matrix::Zero(4, 3);
    for (int s = 0; s < 4; ++s) {
      const Vector mass = rng.simplex_point(static_cast<int>(faces[s].size()), 0.02);
      for (std::size_t j = 0; j < faces[s].size(); ++j)
        pi(s, faces[s][static_cast<std::size_t>(j)]) = mass[static_cast<Eigen::Index>(j)];
    }
    EXPECT_GE(pythagoras_check(g, rng.interior_policy(4, 3), faces, pi).gap, -1e-8);
  }
}

TEST(MaxEntropyOptimal, UniqueOptimumIsDeterministic) {
  const MdpInstance m = make_two_cycle();
  const Matrix pistar = max_entropy_optimal_policy(m, uniform_policy(m));
  EXPECT_NEAR(pistar(0, 0), 1.0, 1e-10);
  EXPECT_NEAR(pistar(1, 0), 1.0, 1e-10);
}

TEST(MaxEntropyOptimal, TieBanditSplitsEvenly) {
  Vector r(3);
  r << 1.0, 1.0, 0.0;
  const Matrix pistar = max_entropy_optimal_policy(make_bandit(r), uniform_policy(make_bandit(r)));
  EXPECT_NEAR(pistar(0, 0), 0.5, 1e-10);
  EXPECT_NEAR(pistar(0, 1), 0.5, 1e-10);
  EXPECT_EQ(pistar(0, 2), 0.0);
}

TEST(MaxEntropyOptimal, MinimizesAmongFaceSupportedOptima) {
  Vector r(3);
  r << 1.0, 1.0, 0.0;
  const MdpInstance m = make_bandit(r);
  Rng rng(31);
  const Matrix pi0 = rng.interior_policy(1, 3);
  const Matrix pistar = max_entropy_optimal_policy(m, pi0);
  const double dk_star = kakade_divergence(m, pistar, pi0);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix cand = Matrix::Zero(1, 3);
    const double p = rng.uniform01();
    cand(0, 0) = p;
    cand(0, 1) = 1.0 - p;
    EXPECT_LE(dk_star, kakade_divergence(m, cand, pi0) + 1e-10);
  }
}

TEST(SoftSolver, InputValidation) {
  const MdpInstance m = make_bandit3();
  EXPECT_THROW(solve_entropy_regularized(m, uniform_policy(m), -1.0), std::invalid_argument);
  Matrix boundary(1, 3);
  boundary << 0.5, 0.5, 0.0;
  EXPECT_THROW(solve_entropy_regularized(m, boundary, 1.0), std::invalid_argument);
  EXPECT_THROW(kakade_projection(m, uniform_policy(m), {{}}), std::invalid_argument);
}

TEST(Sigma, ScalarBregmanOracle) {
  // sigma = 3: h(x) = 1/(2x), h'(x) = -1/(2x^2), evaluated symbolically.
  Eigen::RowVectorXd p(2), q(2);
  p << 0.6, 0.4;
  q << 0.5, 0.5;
  const double expected = (1.0 / 1.2 - 1.0 + 2.0 * 0.1) + (1.0 / 0.8 - 1.0 - 2.0 * 0.1);
  EXPECT_NEAR(sigma_bregman(p, q, 3.0), expected, 1e-13);
  EXPECT_NEAR(sigma_bregman(q, q, 3.0), 0.0, 1e-15);
}

TEST(Sigma, PointMassDivergenceValue) {
  Eigen::RowVectorXd p(3), q(3);
  p << 1.0, 0.0, 0.0;
  q << 1.0 / 3, 1.0 / 3, 1.0 / 3;
  EXPECT_NEAR(sigma_bregman(p, q, 1.5), 2.928203230275509, 1e-12);
}

TEST(Sigma, BoundaryBehavior) {
  Eigen::RowVectorXd p(2), q(2), b(2);
  p << 1.0, 0.0;
  q << 0.5, 0.5;
  b << 1.0, 0.0;
  EXPECT_THROW(sigma_bregman(p, q, 2.0), DivergenceInfiniteError);  // h(0) = +inf
  EXPECT_THROW(sigma_bregman(p, q, 3.0), DivergenceInfiniteError);
  EXPECT_THROW(sigma_bregman(q, b, 1.5), DivergenceInfiniteError);  // boundary reference
  EXPECT_NO_THROW(sigma_bregman(p, q, 1.5));                        // finite for sigma < 2
}

TEST(Sigma, EntropyBranchMatchesKl) {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector p = rng.simplex_point(4);
    const Vector q = rng.simplex_point(4);
    EXPECT_NEAR(sigma_bregman(p.transpose(), q.transpose(), 1.0),
                kl_divergence(p.transpose(), q.transpose()), 1e-12);
  }
}

TEST(Sigma, OccupancyWeightedEvaluation) {
  Rng rng(41);
  const MdpInstance g = make_garnet(4, 3, 2, 64, 0.85);
  const Matrix pi = rng.interior_policy(4, 3);
  EXPECT_NEAR(sigma_potential_eval(SigmaRegularizer(2.0), g, pi, pi), 0.0, 1e-13);
  // Direct occupancy-weighted recomputation.
  const Matrix pi0 = rng.interior_policy(4, 3);
  const Vector d = state_occupancy(g, pi);
  double direct = 0.0;
  for (int s = 0; s < 4; ++s) direct += d[s] * sigma_bregman(pi.row(s), pi0.row(s), 2.5);
  EXPECT_NEAR(sigma_potential_eval(SigmaRegularizer(2.5), g, pi, pi0), direct, 1e-13);
  EXPECT_THROW(SigmaRegularizer(1.0), std::invalid_argument);
}
