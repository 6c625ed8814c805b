#include "mjlq/stability.hpp"

#include <Eigen/Eigenvalues>

#include "mjlq/coefficients.hpp"
#include "mjlq/errors.hpp"
#include "mjlq/numerics.hpp"

namespace mjlq {

namespace {

constexpr double kAmbiguityBand = 1e-12;
constexpr double kSpectralBoundary = 1e-8;

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      out.block(r * b.rows(), c * b.cols(), b.rows(), b.cols()) = a(r, c) * b;
  return out;
}

}  // namespace

std::string to_string(StabilityMethod m) {
  switch (m) {
    case StabilityMethod::lyapunov: return "lyapunov";
    case StabilityMethod::spectral: return "spectral";
    case StabilityMethod::sign_sufficient: return "sign-sufficient";
    case StabilityMethod::sign_necessary: return "sign-necessary";
  }
  return "lyapunov";
}

std::string to_string(SignScreen s) {
  switch (s) {
    case SignScreen::provably_stable: return "provably_stable";
    case SignScreen::provably_unstable: return "provably_unstable";
    case SignScreen::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

LinearSystem open_loop_system(const ProblemSpec& pb) {
  LinearSystem sys;
  sys.generator = pb.generator;
  for (const RegimeData& rd : pb.regimes) {
    sys.Abar.push_back(rd.A);
    sys.Cbar.push_back(rd.C);
  }
  return sys;
}

LinearSystem closed_loop_system(const ProblemSpec& pb, const FeedbackStrategy& s) {
  LinearSystem sys;
  sys.generator = pb.generator;
  for (int i = 0; i < pb.num_regimes(); ++i) {
    sys.Abar.push_back(closed_loop_A(pb, s, i));
    sys.Cbar.push_back(closed_loop_C(pb, s, i));
  }
  return sys;
}

CoupledMatrixSet solve_coupled_lyapunov(const LinearSystem& sys, const CoupledMatrixSet& Lambda) {
  const int L = sys.regimes();
  const int n = sys.dim();
  const int n2 = n * n;
  const Mat eye_n = Mat::Identity(n, n);
  const Mat eye_n2 = Mat::Identity(n2, n2);

  // Stacked vectorization: row block i of K applies the Lyapunov operator of
  // regime i plus the generator coupling pi_ij to vec(P(j)).
  Mat K = Mat::Zero(n2 * L, n2 * L);
  Vec rhs(n2 * L);
  for (int i = 0; i < L; ++i) {
    const Mat& Ab = sys.Abar[static_cast<size_t>(i)];
    const Mat& Cb = sys.Cbar[static_cast<size_t>(i)];
    K.block(i * n2, i * n2, n2, n2) = kron(Ab.transpose(), eye_n) + kron(eye_n, Ab.transpose()) +
                                      kron(Cb.transpose(), Cb.transpose());
    for (int j = 0; j < L; ++j)
      K.block(i * n2, j * n2, n2, n2) += sys.generator.pi(i, j) * eye_n2;
    Mat lam = symmetrized(Lambda[i]);
    rhs.segment(i * n2, n2) = -Eigen::Map<const Vec>(lam.data(), n2);
  }

  Eigen::FullPivLU<Mat> lu(K);
  if (!lu.isInvertible())
    throw SingularOperator("stacked Lyapunov operator is numerically singular");
  const Vec x = lu.solve(rhs);

  CoupledMatrixSet P;
  for (int i = 0; i < L; ++i) {
    Mat pi_mat = Eigen::Map<const Mat>(x.data() + i * n2, n, n);
    P.entries.push_back(symmetrized(pi_mat));
  }

  for (int i = 0; i < L; ++i) {
    const Mat& Ab = sys.Abar[static_cast<size_t>(i)];
    const Mat& Cb = sys.Cbar[static_cast<size_t>(i)];
    Mat res = P[i] * Ab + Ab.transpose() * P[i] + Cb.transpose() * P[i] * Cb + Lambda[i];
    for (int j = 0; j < L; ++j) res += sys.generator.pi(i, j) * P[j];
    const double scale = 1.0 + Lambda[i].norm() + P.max_norm();
    if (res.norm() > 1e-10 * scale)
      throw SingularOperator("Lyapunov solve residual " + std::to_string(res.norm()) +
                             " exceeds tolerance; operator is ill-conditioned");
  }
  return P;
}

double spectral_abscissa(const LinearSystem& sys) {
  const int L = sys.regimes();
  const int n = sys.dim();
  const int n2 = n * n;
  const Mat eye_n = Mat::Identity(n, n);
  const Mat eye_n2 = Mat::Identity(n2, n2);

  // Adjoint second-moment generator: T_i(S) = Abar(i)S_i + S_i Abar(i)' +
  // Cbar(i)S_i Cbar(i)' + sum_j pi_ji S_j. Its spectrum equals that of the
  // Lyapunov operator, with the transposed generator coupling.
  Mat T = Mat::Zero(n2 * L, n2 * L);
  for (int i = 0; i < L; ++i) {
    const Mat& Ab = sys.Abar[static_cast<size_t>(i)];
    const Mat& Cb = sys.Cbar[static_cast<size_t>(i)];
    T.block(i * n2, i * n2, n2, n2) = kron(eye_n, Ab) + kron(Ab, eye_n) + kron(Cb, Cb);
    for (int j = 0; j < L; ++j)
      T.block(i * n2, j * n2, n2, n2) += sys.generator.pi(j, i) * eye_n2;
  }

  Eigen::EigenSolver<Mat> es(T, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw EigenFailure("eigenvalue iteration for the second-moment generator did not converge");
  return es.eigenvalues().real().maxCoeff();
}

SignScreenReport sign_screen(const LinearSystem& sys) {
  SignScreenReport report;
  bool all_neg = true, all_pos = true;
  for (int i = 0; i < sys.regimes(); ++i) {
    const Mat& Ab = sys.Abar[static_cast<size_t>(i)];
    const Mat& Cb = sys.Cbar[static_cast<size_t>(i)];
    const Mat m = Ab + Ab.transpose() + Cb.transpose() * Cb;
    const double lo = min_eig_sym(m), hi = max_eig_sym(m);
    report.min_eigs.push_back(lo);
    report.max_eigs.push_back(hi);
    all_neg = all_neg && hi < 0.0;
    all_pos = all_pos && lo > 0.0;
  }
  if (all_neg)
    report.verdict = SignScreen::provably_stable;
  else if (all_pos)
    report.verdict = SignScreen::provably_unstable;
  else
    report.verdict = SignScreen::inconclusive;
  return report;
}

StabilityCertificate lyapunov_stability_verdict(const LinearSystem& sys) {
  StabilityCertificate cert;
  cert.method = StabilityMethod::lyapunov;

  CoupledMatrixSet witness;
  try {
    witness = solve_coupled_lyapunov(sys, CoupledMatrixSet::Identity(sys.regimes(), sys.dim()));
  } catch (const SingularOperator&) {
    // On the stability boundary the operator degenerates; conservative verdict.
    cert.stable = false;
    cert.boundary_warning = true;
    return cert;
  }

  double min_eig = std::numeric_limits<double>::infinity();
  bool all_pd = true;
  for (int i = 0; i < witness.regimes(); ++i) {
    const double lam = min_eig_sym(witness[i]);
    min_eig = std::min(min_eig, lam);
    all_pd = all_pd && lam > 1e-12 * (1.0 + witness[i].norm());
  }
  cert.min_eig_P = min_eig;

  if (std::abs(min_eig) <= kAmbiguityBand) {
    cert.stable = false;
    cert.boundary_warning = true;
    return cert;
  }
  cert.stable = all_pd;
  if (cert.stable) cert.witness_P = std::move(witness);
  return cert;
}

StabilityCertificate check_l2_stable(const LinearSystem& sys) {
  const SignScreenReport screen = sign_screen(sys);
  StabilityCertificate cert = lyapunov_stability_verdict(sys);
  const double abscissa = spectral_abscissa(sys);
  cert.spectral_abscissa = abscissa;

  if (!cert.boundary_warning && std::abs(abscissa) >= kSpectralBoundary &&
      (abscissa < 0.0) != cert.stable)
    throw InternalError("Lyapunov and spectral stability tests disagree (abscissa " +
                        std::to_string(abscissa) + ")");

  if (screen.verdict == SignScreen::provably_stable) {
    if (!cert.stable)
      throw InternalError("sign screen proves stability but the Lyapunov test disagrees");
    cert.method = StabilityMethod::sign_sufficient;
  } else if (screen.verdict == SignScreen::provably_unstable) {
    if (cert.stable)
      throw InternalError("sign screen proves instability but the Lyapunov test disagrees");
    cert.method = StabilityMethod::sign_necessary;
  }
  return cert;
}

std::vector<double> lyapunov_representation_check(const LinearSystem& sys,
                                                  const CoupledMatrixSet& Lambda,
                                                  const SimulationConfig& config) {
  const StabilityCertificate cert = check_l2_stable(sys);
  if (!cert.stable)
    throw ValidationError("representation check requires an L2-stable system");
  for (int i = 0; i < Lambda.regimes(); ++i)
    if (min_eig_sym(Lambda[i]) < -1e-12)
      throw ValidationError("representation check requires Lambda >= 0");

  const CoupledMatrixSet P = solve_coupled_lyapunov(sys, Lambda);
  const RepresentationCheck rep =
      lyapunov_representation_mc(sys.Abar, sys.Cbar, sys.generator, Lambda, P, config);
  return rep.rel_errors;
}

}  // namespace mjlq
