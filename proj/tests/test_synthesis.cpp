#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "mjlq/errors.hpp"
#include "mjlq/mcsim.hpp"
#include "mjlq/numerics.hpp"
#include "mjlq/synthesis.hpp"

using namespace mjlq;
using mjlq::testing::scalar_problem;

namespace {

ProblemSpec with_offsets(ProblemSpec pb, const Vec& b, const Vec& sigma, const Vec& q,
                         const Vec& rho) {
  for (RegimeData& rd : pb.regimes) {
    rd.b = b;
    rd.sigma = sigma;
    rd.q = q;
    rd.rho = rho;
  }
  return pb;
}

}  // namespace

TEST_CASE("discount transform shifts A by r/2 and clears the rate") {
  const ProblemSpec pb = testing::planar3_problem();
  const ProblemSpec reduced = discount_transform(pb);
  CHECK(reduced.discount_r == 0.0);
  for (int i = 0; i < 3; ++i) {
    CHECK((reduced.regimes[i].A - (pb.regimes[i].A - 0.1 * Mat::Identity(2, 2))).norm() == 0.0);
    CHECK((reduced.regimes[i].B - pb.regimes[i].B).norm() == 0.0);
    CHECK((reduced.regimes[i].Q - pb.regimes[i].Q).norm() == 0.0);
  }
}

TEST_CASE("zero-rate transform is the identity") {
  const ProblemSpec pb = testing::scalar3_problem();
  const ProblemSpec same = discount_transform(pb);
  CHECK((same.regimes[0].A - pb.regimes[0].A).norm() == 0.0);
}

TEST_CASE("discounted problems with offsets are rejected") {
  ProblemSpec pb = with_offsets(testing::scalar3_problem(), Vec::Ones(1), Vec::Zero(1),
                                Vec::Zero(1), Vec::Zero(2));
  pb.discount_r = 0.1;
  CHECK_THROWS_AS(discount_transform(pb), UnsupportedInhomogeneous);
}

TEST_CASE("discounted fixture end-to-end matches the pinned matrices") {
  const ProblemSpec pb = testing::planar3_problem();
  const CareSolution sol = solve_care(discount_transform(pb));

  for (int i = 0; i < 3; ++i) {
    const Mat dp = sol.P[i] - testing::planar3_P(i);
    const Mat dt = sol.theta.theta[i] - testing::planar3_theta(i);
    INFO("regime ", i, " |dP|=", dp.cwiseAbs().maxCoeff(), " |dTheta|=",
         dt.cwiseAbs().maxCoeff());
    CHECK(dp.cwiseAbs().maxCoeff() <= 5e-4);
    CHECK(dt.cwiseAbs().maxCoeff() <= 5e-4);
    CHECK(sol.residuals[i] <= 1e-7);
  }
  CHECK(sol.stabilizing);
}

TEST_CASE("undiscounting keeps gains and rejects offsets") {
  const FeedbackStrategy zero = FeedbackStrategy::Zero(3, 2, 2);
  const FeedbackStrategy same = undiscount_strategy(zero, 0.2);
  CHECK(same.theta[0].norm() == 0.0);

  FeedbackStrategy with_nu = zero;
  with_nu.nu[1](0) = 0.25;
  CHECK_THROWS_AS(undiscount_strategy(with_nu, 0.2), UnsupportedInhomogeneous);
  CHECK_NOTHROW(undiscount_strategy(with_nu, 0.0));
}

TEST_CASE("homogeneous problems have a zero adjoint and zero offsets") {
  const ProblemSpec pb = testing::scalar3_problem();
  const CareSolution sol = solve_care(pb);
  const StationaryAdjoint adj = solve_stationary_adjoint(pb, sol);
  for (const Vec& v : adj.v) CHECK(v.norm() == 0.0);
  const FeedbackStrategy strategy = build_closed_loop(pb, sol);
  for (const Vec& nu : strategy.nu) CHECK(nu.norm() == 0.0);
  for (int i = 0; i < 3; ++i) CHECK((strategy.theta[i] - sol.theta.theta[i]).norm() == 0.0);
}

TEST_CASE("scalar stationary adjoint against the hand solve") {
  // A=-2, B=0 gives F = -2; with P=1 and b=1 the drift balance is -2v+1=0.
  ProblemSpec pb = with_offsets(scalar_problem(-2, 0, 0, 0, 4, 0, 1), Vec::Ones(1), Vec::Zero(1),
                                Vec::Zero(1), Vec::Zero(1));
  const CareSolution sol = solve_care(pb);
  REQUIRE(sol.P[0](0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  const StationaryAdjoint adj = solve_stationary_adjoint(pb, sol);
  CHECK(adj.v[0](0) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(adj.z(0, 0).norm() == 0.0);
}

TEST_CASE("fixture with constant drift offsets: adjoint residual and offsets") {
  const ProblemSpec pb = with_offsets(testing::scalar3_problem(), Vec::Ones(1), Vec::Zero(1),
                                      Vec::Zero(1), Vec::Zero(2));
  const CareSolution sol = solve_care(pb);
  const StationaryAdjoint adj = solve_stationary_adjoint(pb, sol);

  // The stacked drift-balance equations hold regime by regime.
  for (int i = 0; i < 3; ++i) {
    const RegimeData& rd = pb.regimes[i];
    const Mat N = care_N(pb, sol.P, i);
    const Mat l = care_L(pb, sol.P, i);
    const Mat l_Ninv = l * N.inverse();
    Vec res = (rd.A.transpose() - l_Ninv * rd.B.transpose()) * adj.v[i] + sol.P[i] * *rd.b;
    for (int j = 0; j < 3; ++j) res += pb.generator.pi(i, j) * adj.v[j];
    CHECK(res.norm() < 1e-10);
  }

  const FeedbackStrategy strategy = build_closed_loop(pb, sol);
  const std::vector<Vec> rho_tilde = stationary_rho_tilde(pb, sol.P, &adj);
  for (int i = 0; i < 3; ++i) {
    const Vec gap = care_N(pb, sol.P, i) * strategy.nu[i] + rho_tilde[i];
    CHECK(gap.norm() <= 1e-9);
  }
}

TEST_CASE("offset strategy beats the gain-only strategy on the offset problem") {
  const ProblemSpec pb = with_offsets(testing::scalar3_problem(), Vec::Ones(1), Vec::Zero(1),
                                      Vec::Zero(1), Vec::Zero(2));
  const CareSolution sol = solve_care(pb);
  const FeedbackStrategy with_nu = build_closed_loop(pb, sol);
  FeedbackStrategy gain_only = with_nu;
  for (Vec& nu : gain_only.nu) nu.setZero();

  SimulationConfig cfg;
  cfg.n_paths = 8000;
  cfg.horizon_T = 20.0;
  cfg.dt = 2e-3;
  cfg.master_seed = 91;
  cfg.x0 = Vec::Ones(1);
  cfg.i0 = 0;
  const SimResult opt = simulate_paths(pb, with_nu, cfg);
  const SimResult off = simulate_paths(pb, gain_only, cfg);
  const double combined = std::sqrt(opt.cost_stderr * opt.cost_stderr +
                                    off.cost_stderr * off.cost_stderr);
  INFO("cost with offsets ", opt.cost_mean, " without ", off.cost_mean, " se ", combined);
  CHECK(opt.cost_mean <= off.cost_mean + 3.0 * combined);
}

TEST_CASE("value function evaluates the quadratic form") {
  const ProblemSpec pb = testing::scalar3_problem();
  const CareSolution sol = solve_care(pb);
  const ValueReport report = value_function(pb, sol);
  CHECK(report.evaluate(Vec::Ones(1), 2) == doctest::Approx(19.16846222).epsilon(1e-6));
  CHECK(report.evaluate(Vec::Zero(1), 0) == 0.0);
  CHECK_FALSE(report.constant_term_divergent);
}

TEST_CASE("value of the discounted fixture at the initial state") {
  const ProblemSpec pb = testing::planar3_problem();
  const CareSolution sol = solve_care(discount_transform(pb));
  const ValueReport report = value_function(discount_transform(pb), sol);
  Vec x(2);
  x << 1, 0;
  CHECK(std::abs(report.evaluate(x, 0) - 0.2824) <= 5e-4);
}

TEST_CASE("inhomogeneous value report exposes only the x-dependent part") {
  const ProblemSpec pb = with_offsets(testing::scalar3_problem(), Vec::Ones(1), Vec::Zero(1),
                                      Vec::Zero(1), Vec::Zero(2));
  const CareSolution sol = solve_care(pb);
  const ValueReport report = value_function(pb, sol);
  CHECK(report.constant_term_divergent);
  CHECK_FALSE(report.constant_term.has_value());
  REQUIRE(report.adjoint.has_value());
  const double at_one = report.evaluate(Vec::Ones(1), 0);
  const double expected = sol.P[0](0, 0) + 2.0 * report.adjoint->v[0](0);
  CHECK(at_one == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("stationarity residual wrapper covers the inhomogeneous strategy") {
  const ProblemSpec pb = with_offsets(testing::scalar3_problem(), Vec::Ones(1), Vec::Zero(1),
                                      Vec::Zero(1), Vec::Zero(2));
  const CareSolution sol = solve_care(pb);
  const FeedbackStrategy strategy = build_closed_loop(pb, sol);

  SimulationConfig cfg;
  cfg.n_paths = 300;
  cfg.horizon_T = 10.0;
  cfg.dt = 2e-3;
  cfg.master_seed = 5;
  cfg.x0 = Vec::Ones(1);
  cfg.i0 = 0;
  const double at_opt = stationarity_residual(pb, sol, strategy, cfg);
  CHECK(at_opt <= 1e-9);

  FeedbackStrategy bumped = strategy;
  bumped.nu[0](0) += 0.1;
  CHECK(stationarity_residual(pb, sol, bumped, cfg) > 1e-3);
}

TEST_CASE("discounted cost of the strategy on the original dynamics matches the value") {
  const ProblemSpec pb = testing::planar3_problem();
  const ProblemSpec reduced = discount_transform(pb);
  const CareSolution sol = solve_care(reduced);
  const FeedbackStrategy strategy = undiscount_strategy(build_closed_loop(reduced, sol), 0.2);

  SimulationConfig cfg;
  cfg.n_paths = 20000;
  cfg.horizon_T = 15.0;
  cfg.dt = 1e-3;
  cfg.master_seed = 2025;
  cfg.x0 = Vec::Zero(2);
  cfg.x0(0) = 1.0;
  cfg.i0 = 0;
  cfg.discount_r = 0.2;
  const SimResult sim = simulate_paths(pb, strategy, cfg);
  Vec x(2);
  x << 1, 0;
  const double value = x.dot(sol.P[0] * x);
  INFO("mc ", sim.cost_mean, " +- ", sim.cost_stderr, " value ", value);
  CHECK(std::abs(sim.cost_mean - value) <= 3.0 * sim.cost_stderr);
  CHECK(sim.cost_reliable);
}
