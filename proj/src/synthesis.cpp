#include "mjlq/synthesis.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "mjlq/errors.hpp"
#include "mjlq/numerics.hpp"

namespace mjlq {

StationaryAdjoint solve_stationary_adjoint(const ProblemSpec& pb, const CareSolution& care) {
  if (!pb.inhomogeneous())
    return StationaryAdjoint{std::vector<Vec>(static_cast<size_t>(pb.num_regimes()),
                                              Vec::Zero(pb.n))};
  const int L = pb.num_regimes(), n = pb.n;
  const CoupledMatrixSet& P = care.P;

  Mat K = Mat::Zero(n * L, n * L);
  Vec rhs = Vec::Zero(n * L);
  for (int i = 0; i < L; ++i) {
    const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
    const Mat N = care_N(pb, P, i);
    if (min_eig_sym(N) <= 0.0)
      throw SingularN("stationary adjoint needs N(P,i) > 0 (regime " + std::to_string(i) + ")");
    const Mat l = care_L(pb, P, i);
    const Mat l_Ninv = l * N.llt().solve(Mat::Identity(pb.m, pb.m));

    const Mat F = rd.A.transpose() - l_Ninv * rd.B.transpose();
    const Vec h = (rd.C.transpose() - l_Ninv * rd.D.transpose()) * (P[i] * *rd.sigma) -
                  l_Ninv * *rd.rho + P[i] * *rd.b + *rd.q;

    K.block(i * n, i * n, n, n) = F;
    for (int j = 0; j < L; ++j)
      K.block(i * n, j * n, n, n) += pb.generator.pi(i, j) * Mat::Identity(n, n);
    rhs.segment(i * n, n) = -h;
  }

  Eigen::FullPivLU<Mat> lu(K);
  if (!lu.isInvertible())
    throw SingularSystem("stacked stationary-adjoint system is singular; the ansatz does not "
                         "apply to this instance");
  const Vec v = lu.solve(rhs);

  StationaryAdjoint adj;
  for (int i = 0; i < L; ++i) adj.v.push_back(v.segment(i * n, n));
  return adj;
}

std::vector<Vec> stationary_rho_tilde(const ProblemSpec& pb, const CoupledMatrixSet& P,
                                      const StationaryAdjoint* adjoint) {
  std::vector<Vec> out;
  for (int i = 0; i < pb.num_regimes(); ++i) {
    const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
    Vec rt = Vec::Zero(pb.m);
    if (pb.inhomogeneous()) {
      rt = rd.D.transpose() * (P[i] * *rd.sigma) + *rd.rho;
      if (adjoint) rt += rd.B.transpose() * adjoint->v[static_cast<size_t>(i)];
    }
    out.push_back(std::move(rt));
  }
  return out;
}

FeedbackStrategy build_closed_loop(const ProblemSpec& pb, const CareSolution& care) {
  FeedbackStrategy s;
  s.theta = care.theta.theta;
  s.nu.assign(static_cast<size_t>(pb.num_regimes()), Vec::Zero(pb.m));
  if (!pb.inhomogeneous()) return s;

  const StationaryAdjoint adjoint = solve_stationary_adjoint(pb, care);
  const std::vector<Vec> rho_tilde = stationary_rho_tilde(pb, care.P, &adjoint);
  for (int i = 0; i < pb.num_regimes(); ++i) {
    const Mat N = care_N(pb, care.P, i);
    const Mat Npinv = sym_pinv(N);
    const Vec& rt = rho_tilde[static_cast<size_t>(i)];
    // Open-loop solvability requires rho_tilde in the range of N.
    const double out_of_range = (rt - N * (Npinv * rt)).norm();
    if (out_of_range > 1e-9 * (1.0 + rt.norm()))
      throw SingularN("rho_tilde lies outside range(N) in regime " + std::to_string(i) +
                      " (defect " + std::to_string(out_of_range) + ")");
    s.nu[static_cast<size_t>(i)] = -Npinv * rt;
  }
  return s;
}

ProblemSpec discount_transform(const ProblemSpec& pb) {
  if (pb.discount_r == 0.0) return pb;
  if (pb.inhomogeneous())
    throw UnsupportedInhomogeneous(
        "discounted problems with offsets are outside the regime-constant model (the "
        "transformed drivers are time-varying)");
  ProblemSpec out = pb;
  for (RegimeData& rd : out.regimes)
    rd.A -= 0.5 * pb.discount_r * Mat::Identity(pb.n, pb.n);
  out.discount_r = 0.0;
  return out;
}

FeedbackStrategy undiscount_strategy(const FeedbackStrategy& strategy, double r) {
  if (r > 0.0 && strategy.has_offsets())
    throw UnsupportedInhomogeneous("nonzero offsets cannot be carried back through the "
                                   "discount transform");
  return strategy;
}

ValueReport value_function(const ProblemSpec& pb, const CareSolution& care,
                           const std::optional<StationaryAdjoint>& adjoint) {
  ValueReport report;
  report.P = care.P;
  if (!pb.inhomogeneous()) {
    report.constant_term = 0.0;
    return report;
  }
  report.adjoint = adjoint ? *adjoint : solve_stationary_adjoint(pb, care);
  // Constant offsets make the integral term of the value diverge over the
  // infinite horizon; only the x-dependent part is exposed.
  report.constant_term_divergent = true;
  return report;
}

double stationarity_residual(const ProblemSpec& pb, const CareSolution& care,
                             const FeedbackStrategy& strategy, const SimulationConfig& config) {
  StationarityOracle oracle;
  oracle.P = care.P;
  if (pb.inhomogeneous()) {
    const StationaryAdjoint adjoint = solve_stationary_adjoint(pb, care);
    oracle.rho_tilde = stationary_rho_tilde(pb, care.P, &adjoint);
  } else {
    oracle.rho_tilde = stationary_rho_tilde(pb, care.P, nullptr);
  }
  return simulate_paths(pb, strategy, config, &oracle).stationarity_residual;
}

}  // namespace mjlq
