#pragma once

#include "mjlq/types.hpp"

namespace mjlq {

// Per-regime Riccati coefficient maps evaluated at a candidate P:
//
//   care_M(P,i) = P(i)A(i) + A(i)'P(i) + C(i)'P(i)C(i) + Q(i) + sum_j pi_ij P(j)
//   care_L(P,i) = P(i)B(i) + C(i)'P(i)D(i) + S(i)'          (n x m)
//   care_N(P,i) = D(i)'P(i)D(i) + R(i)                      (m x m)
//
// These are shared by the Riccati solvers, the strategy assembly and the
// simulator's stationarity check.

Mat care_M(const ProblemSpec& pb, const CoupledMatrixSet& P, int i);
Mat care_L(const ProblemSpec& pb, const CoupledMatrixSet& P, int i);
Mat care_N(const ProblemSpec& pb, const CoupledMatrixSet& P, int i);

/// Algebraic residual E_i(P) = M(P,i) - L(P,i) N(P,i)^+ L(P,i)'.
Mat care_residual(const ProblemSpec& pb, const CoupledMatrixSet& P, int i);

/// Frobenius norms of E_i(P) for every regime.
std::vector<double> care_residual_norms(const ProblemSpec& pb, const CoupledMatrixSet& P);

/// Closed-loop pair (A + B Theta, C + D Theta) for one regime.
Mat closed_loop_A(const ProblemSpec& pb, const FeedbackStrategy& s, int i);
Mat closed_loop_C(const ProblemSpec& pb, const FeedbackStrategy& s, int i);

}  // namespace mjlq
