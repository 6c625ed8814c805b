#pragma once

#include <functional>
#include <optional>

#include "mjlq/mcsim.hpp"
#include "mjlq/riccati.hpp"
#include "mjlq/types.hpp"

namespace mjlq {

/// Stationary representation of the adjoint for regime-constant offsets:
/// eta(t) = v(alpha_t), zeta = 0, z_j = v(j) - v(i) at regime i.
struct StationaryAdjoint {
  std::vector<Vec> v;  // L entries, size n

  Vec z(int i, int j) const { return v[static_cast<size_t>(j)] - v[static_cast<size_t>(i)]; }
};

struct ValueReport {
  CoupledMatrixSet P;
  std::optional<StationaryAdjoint> adjoint;
  std::optional<double> constant_term;  // absent when the integral term diverges
  bool constant_term_divergent = false;

  double evaluate(const Vec& x, int i) const {
    double val = x.dot(P[i] * x);
    if (adjoint) val += 2.0 * adjoint->v[static_cast<size_t>(i)].dot(x);
    if (constant_term) val += *constant_term;
    return val;
  }
};

/// Solves the stacked nL x nL linear system of the stationary adjoint:
///   F(i) v(i) + sum_j pi_ij v(j) + h(i) = 0,
///   F(i) = A(i)' - L(P,i) N(P,i)^{-1} B(i)',
///   h(i) = [C(i)' - L(P,i) N(P,i)^{-1} D(i)'] P(i) sigma(i)
///          - L(P,i) N(P,i)^{-1} rho(i) + P(i) b(i) + q(i).
/// Requires regime-constant offsets and N(P,i) > 0.
StationaryAdjoint solve_stationary_adjoint(const ProblemSpec& pb, const CareSolution& care);

/// rho_tilde(i) = B(i)'v(i) + D(i)'P(i)sigma(i) + rho(i) (zeta = 0); zero for
/// homogeneous problems.
std::vector<Vec> stationary_rho_tilde(const ProblemSpec& pb, const CoupledMatrixSet& P,
                                      const StationaryAdjoint* adjoint);

/// Gains from the accepted solution plus offsets nu(i) = -N(P,i)^+ rho_tilde(i).
/// Throws SingularN when N is singular and rho_tilde falls outside its range.
FeedbackStrategy build_closed_loop(const ProblemSpec& pb, const CareSolution& care);

/// Reduction of the discounted problem: A <- A - (r/2) I, discount_r <- 0.
/// Rejects discounted problems with offsets (the transformed drivers are
/// time-varying and leave the regime-constant model).
ProblemSpec discount_transform(const ProblemSpec& pb);

/// Maps a strategy of the transformed problem back to the discounted one.
/// Gains are unchanged; nonzero offsets are rejected for r > 0.
FeedbackStrategy undiscount_strategy(const FeedbackStrategy& strategy, double r);

/// V(x,i) = <P(i)x,x> for homogeneous problems; with regime-constant offsets
/// the x-dependent part <P(i)x,x> + 2<v(i),x> is exposed and the divergent
/// constant term is marked unavailable.
ValueReport value_function(const ProblemSpec& pb, const CareSolution& care,
                           const std::optional<StationaryAdjoint>& adjoint = std::nullopt);

/// Mean over sampled (path, time) of ||N(P,alpha)u + L(P,alpha)'X + rho~||
/// along paths simulated under `strategy`. Identically zero in exact
/// arithmetic when the strategy is the one built from `care`, so the value
/// must stay below 1e-9 * (1 + mean|X|); a plumbing consistency check.
double stationarity_residual(const ProblemSpec& pb, const CareSolution& care,
                             const FeedbackStrategy& strategy, const SimulationConfig& config);

}  // namespace mjlq
