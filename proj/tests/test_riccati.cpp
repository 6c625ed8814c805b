#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "mjlq/errors.hpp"
#include "mjlq/numerics.hpp"
#include "mjlq/riccati.hpp"

using namespace mjlq;
using mjlq::testing::scalar_problem;

namespace {
const double kScalarRoot = (std::sqrt(13.0) - 1.0) / 6.0;  // root of 3P^2 + P - 1
}

TEST_CASE("CDRE sweep reaches the decoupled linear fixed point") {
  const ProblemSpec pb = scalar_problem(-1, 0, 0, 0, 2, 0, 1);
  const CoupledMatrixSet P = integrate_cdre(pb, CoupledMatrixSet::Zero(1, 1), 20.0);
  CHECK(P[0](0, 0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("CDRE sweep reaches the scalar quadratic root") {
  const ProblemSpec pb = scalar_problem(-1, 1, 0, 1, 1, 0, 1);
  const auto oracle = testing::scalar_care_oracle(-1, 1, 0, 1, 1, 0, 1);
  REQUIRE(oracle.has_value());
  CHECK(*oracle == doctest::Approx(kScalarRoot).epsilon(1e-14));
  const CoupledMatrixSet P = integrate_cdre(pb, CoupledMatrixSet::Zero(1, 1), 40.0);
  CHECK(P[0](0, 0) == doctest::Approx(*oracle).epsilon(1e-9));
}

TEST_CASE("shift by the known stabilizer reproduces the displayed coefficients") {
  const ProblemSpec pb = testing::scalar3_problem();
  const ProblemSpec shifted = shift_problem(pb, testing::scalar3_known_stabilizer());

  const double a_exp[3] = {-1, -3, -2};
  const double c_exp[3] = {1, 1, -1};
  const double q_exp[3] = {29, 13, 79};
  Mat s_exp(2, 3);
  s_exp << 5, -5, -13, 9, -1, -20;
  for (int i = 0; i < 3; ++i) {
    CHECK(shifted.regimes[i].A(0, 0) == doctest::Approx(a_exp[i]));
    CHECK(shifted.regimes[i].C(0, 0) == doctest::Approx(c_exp[i]));
    CHECK(shifted.regimes[i].Q(0, 0) == doctest::Approx(q_exp[i]));
    CHECK(shifted.regimes[i].S(0, 0) == doctest::Approx(s_exp(0, i)));
    CHECK(shifted.regimes[i].S(1, 0) == doctest::Approx(s_exp(1, i)));
    // B, D, R stay put.
    CHECK(shifted.regimes[i].B == pb.regimes[i].B);
    CHECK(shifted.regimes[i].R == pb.regimes[i].R);
  }
}

TEST_CASE("zero shift is the identity") {
  const ProblemSpec pb = testing::scalar3_problem();
  const ProblemSpec same = shift_problem(pb, FeedbackStrategy::Zero(3, 2, 1));
  for (int i = 0; i < 3; ++i) {
    CHECK((same.regimes[i].A - pb.regimes[i].A).norm() == 0.0);
    CHECK((same.regimes[i].Q - pb.regimes[i].Q).norm() == 0.0);
    CHECK((same.regimes[i].S - pb.regimes[i].S).norm() == 0.0);
  }
}

TEST_CASE("shifting by Sigma then by -Sigma recovers the problem") {
  const ProblemSpec pb = testing::scalar3_problem();
  FeedbackStrategy sigma = testing::scalar3_known_stabilizer();
  const ProblemSpec shifted = shift_problem(pb, sigma);
  FeedbackStrategy neg = sigma;
  for (Mat& t : neg.theta) t = -t;
  const ProblemSpec back = shift_problem(shifted, neg);
  for (int i = 0; i < 3; ++i) {
    CHECK((back.regimes[i].A - pb.regimes[i].A).norm() < 1e-13);
    CHECK((back.regimes[i].C - pb.regimes[i].C).norm() < 1e-13);
    CHECK((back.regimes[i].Q - pb.regimes[i].Q).norm() < 1e-12);
    CHECK((back.regimes[i].S - pb.regimes[i].S).norm() < 1e-13);
  }
}

TEST_CASE("CDRE on the shifted fixture approaches the pinned solution") {
  const ProblemSpec shifted =
      shift_problem(testing::scalar3_problem(), testing::scalar3_known_stabilizer());
  const auto checkpoints =
      integrate_cdre_checkpoints(shifted, CoupledMatrixSet::Zero(3, 1), {1, 2, 4, 8, 16, 32});

  // Monotone convergence at the doubling checkpoints.
  for (size_t k = 0; k + 1 < checkpoints.size(); ++k)
    for (int i = 0; i < 3; ++i)
      CHECK(min_eig_sym(checkpoints[k + 1][i] - checkpoints[k][i]) >= -1e-10);

  const CoupledMatrixSet& last = checkpoints.back();
  for (int i = 0; i < 3; ++i)
    CHECK(last[i](0, 0) == doctest::Approx(testing::kScalar3P[i]).epsilon(1e-6));
}

TEST_CASE("Newton refinement fixes the CDRE tail") {
  const ProblemSpec shifted =
      shift_problem(testing::scalar3_problem(), testing::scalar3_known_stabilizer());
  const CoupledMatrixSet P32 = integrate_cdre(shifted, CoupledMatrixSet::Zero(3, 1), 32.0);
  const CoupledMatrixSet refined = newton_refine(shifted, P32);
  for (double r : care_residual_norms(shifted, refined)) CHECK(r <= 1e-10);
  for (int i = 0; i < 3; ++i)
    CHECK(refined[i](0, 0) == doctest::Approx(testing::kScalar3P[i]).epsilon(1e-8));
}

TEST_CASE("Newton leaves an exact solution untouched and converges quadratically") {
  const ProblemSpec pb = scalar_problem(-1, 1, 0, 1, 1, 0, 1);
  CoupledMatrixSet exact;
  exact.entries = {Mat::Constant(1, 1, kScalarRoot)};
  const CoupledMatrixSet kept = newton_refine(pb, exact);
  CHECK(kept[0](0, 0) == doctest::Approx(kScalarRoot).epsilon(1e-14));

  CoupledMatrixSet rough;
  rough.entries = {Mat::Constant(1, 1, 0.43)};
  SolveTrace trace;
  const CoupledMatrixSet polished = newton_refine(pb, rough, 1e-12, 20, &trace);
  CHECK(std::abs(polished[0](0, 0) - kScalarRoot) < 1e-12);
  CHECK(trace.newton.size() <= 4);
}

TEST_CASE("solve_care reproduces the pinned fixture solution") {
  const ProblemSpec pb = testing::scalar3_problem();
  const CareSolution sol = solve_care(pb);

  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(sol.P[i](0, 0) - testing::kScalar3P[i]) <= 1e-5);
    CHECK(sol.residuals[i] <= 1e-7);
    CHECK(sol.n_margins[i] > 0.0);
    const Mat expected = testing::scalar3_theta(i);
    CHECK(std::abs(sol.theta.theta[i](0, 0) - expected(0, 0)) <= 5e-4);
    CHECK(std::abs(sol.theta.theta[i](1, 0) - expected(1, 0)) <= 5e-4);
  }
  CHECK(sol.stabilizing);
  CHECK_FALSE(sol.trace.checkpoints.empty());
}

TEST_CASE("solve_care matches the scalar oracle") {
  const ProblemSpec pb = scalar_problem(-1, 1, 0, 1, 1, 0, 1);
  const CareSolution sol = solve_care(pb);
  CHECK(std::abs(sol.P[0](0, 0) - kScalarRoot) < 1e-9);
  CHECK(sol.theta.theta[0](0, 0) ==
        doctest::Approx(-kScalarRoot / (1.0 + kScalarRoot)).epsilon(1e-9));
  CHECK(sol.stabilizing);
}

TEST_CASE("gain stationarity identity holds for accepted solutions") {
  const ProblemSpec pb = testing::scalar3_problem();
  const CareSolution sol = solve_care(pb);
  for (int i = 0; i < 3; ++i) {
    const Mat gap = care_N(pb, sol.P, i) * sol.theta.theta[i] +
                    care_L(pb, sol.P, i).transpose();
    CHECK(gap.norm() <= 1e-9);
  }
}

TEST_CASE("oracle agreement on random uniformly convex scalar instances") {
  std::mt19937_64 gen(424242);
  int solved = 0;
  while (solved < 50) {
    const ProblemSpec pb = testing::random_convex_scalar(gen);
    const RegimeData& rd = pb.regimes[0];
    const auto oracle =
        testing::scalar_care_oracle(rd.A(0, 0), rd.B(0, 0), rd.C(0, 0), rd.D(0, 0), rd.Q(0, 0),
                                    rd.S(0, 0), rd.R(0, 0));
    if (!oracle) continue;  // not stabilizable, skip
    const CareSolution sol = solve_care(pb);
    INFO("A=", rd.A(0, 0), " B=", rd.B(0, 0), " C=", rd.C(0, 0), " D=", rd.D(0, 0));
    CHECK(std::abs(sol.P[0](0, 0) - *oracle) < 1e-9);
    ++solved;
  }
}

TEST_CASE("synthesize_stabilizer certifies a gain for the fixture") {
  const ProblemSpec pb = testing::scalar3_problem();
  const FeedbackStrategy gamma = synthesize_stabilizer(pb);
  const StabilityCertificate cert = check_l2_stable(closed_loop_system(pb, gamma));
  CHECK(cert.stable);
}

TEST_CASE("already-stable uncontrolled dynamics synthesize the zero gain") {
  ProblemSpec pb = scalar_problem(-1, 0, 0, 0, 1, 0, 1);
  const FeedbackStrategy gamma = synthesize_stabilizer(pb);
  CHECK(gamma.theta[0].norm() == 0.0);
  CHECK(check_l2_stable(closed_loop_system(pb, gamma)).stable);
}

TEST_CASE("uncontrollable unstable scalar reports NotStabilizable") {
  const ProblemSpec pb = scalar_problem(1, 0, 0, 0, 1, 0, 1);
  CHECK_THROWS_AS(synthesize_stabilizer(pb), NotStabilizable);
  CHECK_THROWS_AS(solve_care(pb), NotStabilizable);
}

TEST_CASE("solving through two different stabilizers is consistent") {
  const ProblemSpec pb = testing::scalar3_problem();
  const FeedbackStrategy sigma = testing::scalar3_known_stabilizer();

  CareOptions via_known;
  via_known.forced_stabilizer = sigma;
  const CareSolution sol_known = solve_care(pb, via_known);
  const CareSolution sol_auto = solve_care(pb);

  CHECK(sol_known.P.max_diff(sol_auto.P) <= 1e-7);
  for (int i = 0; i < 3; ++i)
    CHECK((sol_known.theta.theta[i] - sol_auto.theta.theta[i]).norm() <= 1e-7);

  // The shifted problem solved as its own instance has the same P and the
  // gain composition Theta = Theta_Sigma + Sigma.
  const CareSolution sol_shifted = solve_care(shift_problem(pb, sigma));
  CHECK(sol_shifted.P.max_diff(sol_auto.P) <= 1e-7);
  for (int i = 0; i < 3; ++i)
    CHECK((sol_auto.theta.theta[i] - (sol_shifted.theta.theta[i] + sigma.theta[i])).norm() <=
          1e-7);
}

TEST_CASE("epsilon homotopy agrees with the direct solve on the fixture") {
  const ProblemSpec pb = testing::scalar3_problem();
  const CareSolution direct = solve_care(pb);
  const CareSolution homotopy = solve_care_eps_homotopy(pb);
  CHECK(homotopy.P.max_diff(direct.P) <= 1e-6);
  CHECK(homotopy.stabilizing);
}

TEST_CASE("control-irrelevant degenerate instance is accepted with a zero gain") {
  const ProblemSpec pb = scalar_problem(-1, 0, 0, 0, 2, 0, 0);
  const CareSolution sol = solve_care_eps_homotopy(pb);
  CHECK(sol.P[0](0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.theta.theta[0].norm() == 0.0);
  const CareVerification v = verify_care(pb, sol.P);
  CHECK(v.accepted);
  CHECK(v.n_min_eigs[0] == doctest::Approx(0.0));
}

TEST_CASE("cheap-control degenerate instance is rejected") {
  const ProblemSpec pb = scalar_problem(-1, 1, 0, 0, 1, 0, 0);
  bool rejected = false;
  try {
    const CareSolution sol = solve_care_eps_homotopy(pb);
    rejected = !verify_care(pb, sol.P).accepted;
  } catch (const HomotopyDiverged&) {
    rejected = true;
  }
  CHECK(rejected);
}

TEST_CASE("verify_care accepts the solved fixture and rejects zero") {
  const ProblemSpec pb = testing::scalar3_problem();
  const CareSolution sol = solve_care(pb);

  const CareVerification good = verify_care(pb, sol.P);
  CHECK(good.accepted);
  for (double r : good.residual_care) CHECK(r <= 1e-7);
  for (double r : good.residual_range) CHECK(r <= 1e-9);

  const CareVerification bad = verify_care(pb, CoupledMatrixSet::Zero(3, 1));
  CHECK_FALSE(bad.accepted);
  CHECK(bad.residual_care[0] > 1.0);  // ||Q|| survives
}

TEST_CASE("CDRE monitors report NBreakdown and Blowup") {
  // R < 0 makes N negative from the start.
  const ProblemSpec indefinite = scalar_problem(-1, 1, 0, 0, 1, 0, -1);
  CHECK_THROWS_AS(integrate_cdre(indefinite, CoupledMatrixSet::Zero(1, 1), 5.0), NBreakdown);

  // Unstable and uncontrolled: P grows like e^{2at}.
  const ProblemSpec runaway = scalar_problem(1, 0, 0, 0, 1, 0, 1);
  CHECK_THROWS_AS(integrate_cdre(runaway, CoupledMatrixSet::Zero(1, 1), 40.0), Blowup);
}
