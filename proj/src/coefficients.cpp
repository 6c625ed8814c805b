#include "mjlq/coefficients.hpp"

#include "mjlq/numerics.hpp"

namespace mjlq {

Mat care_M(const ProblemSpec& pb, const CoupledMatrixSet& P, int i) {
  const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
  Mat m = P[i] * rd.A + rd.A.transpose() * P[i] + rd.C.transpose() * P[i] * rd.C + rd.Q;
  for (int j = 0; j < pb.num_regimes(); ++j) m += pb.generator.pi(i, j) * P[j];
  return symmetrized(m);
}

Mat care_L(const ProblemSpec& pb, const CoupledMatrixSet& P, int i) {
  const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
  return P[i] * rd.B + rd.C.transpose() * P[i] * rd.D + rd.S.transpose();
}

Mat care_N(const ProblemSpec& pb, const CoupledMatrixSet& P, int i) {
  const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
  return symmetrized(rd.D.transpose() * P[i] * rd.D + rd.R);
}

Mat care_residual(const ProblemSpec& pb, const CoupledMatrixSet& P, int i) {
  const Mat l = care_L(pb, P, i);
  return symmetrized(care_M(pb, P, i) - l * sym_pinv(care_N(pb, P, i)) * l.transpose());
}

std::vector<double> care_residual_norms(const ProblemSpec& pb, const CoupledMatrixSet& P) {
  std::vector<double> r;
  r.reserve(static_cast<size_t>(pb.num_regimes()));
  for (int i = 0; i < pb.num_regimes(); ++i) r.push_back(care_residual(pb, P, i).norm());
  return r;
}

Mat closed_loop_A(const ProblemSpec& pb, const FeedbackStrategy& s, int i) {
  const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
  return rd.A + rd.B * s.theta[static_cast<size_t>(i)];
}

Mat closed_loop_C(const ProblemSpec& pb, const FeedbackStrategy& s, int i) {
  const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
  return rd.C + rd.D * s.theta[static_cast<size_t>(i)];
}

}  // namespace mjlq
