#include "mjlq/riccati.hpp"

#include <Eigen/Cholesky>
#include <chrono>
#include <cmath>

#include "mjlq/errors.hpp"
#include "mjlq/numerics.hpp"

namespace mjlq {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                 kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                 kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192, kB5 = -2187.0 / 6784,
                 kB6 = 11.0 / 84;
// Difference between the 5th- and 4th-order weights (error estimate).
constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                 kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;

Vec pack(const CoupledMatrixSet& set) {
  const int L = set.regimes(), n = set.dim();
  Vec y(L * n * n);
  for (int i = 0; i < L; ++i)
    y.segment(i * n * n, n * n) = Eigen::Map<const Vec>(set[i].data(), n * n);
  return y;
}

CoupledMatrixSet unpack(const Vec& y, int L, int n) {
  CoupledMatrixSet set;
  for (int i = 0; i < L; ++i)
    set.entries.emplace_back(Eigen::Map<const Mat>(y.data() + i * n * n, n, n));
  return set;
}

/// Forward flow of the autonomous coupled Riccati equation. The backward
/// solution with terminal value G satisfies P(0;t) = Sigma(t) where Sigma
/// solves Sigma' = M(Sigma) - L(Sigma) N(Sigma)^{-1} L(Sigma)', Sigma(0) = G,
/// so horizons are reached by integrating forward once.
class CdreIntegrator {
 public:
  CdreIntegrator(const ProblemSpec& pb, const CoupledMatrixSet& G, const CdreOptions& opts)
      : pb_(&pb), opts_(opts), L_(pb.num_regimes()), n_(pb.n), t_(0.0), h_(opts.initial_step) {
    CoupledMatrixSet g = G;
    g.symmetrize();
    y_ = pack(g);
  }

  double t() const { return t_; }

  CoupledMatrixSet state() const { return unpack(y_, L_, n_); }

  void advance_to(double t_target) {
    while (t_ < t_target) {
      double h = std::min({h_, step_cap(), opts_.max_step, t_target - t_});
      step(h);
    }
  }

 private:
  /// Keeps h * |J| inside the stability region of the explicit pair, where J
  /// is the closed-loop Jacobian of the Riccati flow at the current state.
  /// Otherwise the controller rides the error bound forever instead of
  /// settling onto the fixed point.
  double step_cap() const {
    const CoupledMatrixSet P = unpack(y_, L_, n_);
    double scale = 1e-6;
    for (int i = 0; i < L_; ++i) {
      const Mat N = care_N(*pb_, P, i);
      Mat theta;
      if (min_eig_sym(N) > opts_.n_min_eig)
        theta = -N.llt().solve(care_L(*pb_, P, i).transpose());
      else
        theta = Mat::Zero(pb_->m, n_);
      const RegimeData& rd = pb_->regimes[static_cast<size_t>(i)];
      const Mat a_cl = rd.A + rd.B * theta;
      const Mat c_cl = rd.C + rd.D * theta;
      const double local = 2.0 * a_cl.norm() + c_cl.norm() * c_cl.norm() +
                           2.0 * std::abs(pb_->generator.pi(i, i));
      scale = std::max(scale, local);
    }
    return 2.0 / scale;
  }
  Vec rhs(const Vec& y) const {
    const CoupledMatrixSet P = unpack(y, L_, n_);
    Vec dy(y.size());
    for (int i = 0; i < L_; ++i) {
      const Mat N = care_N(*pb_, P, i);
      if (min_eig_sym(N) < opts_.n_min_eig)
        throw NBreakdown("N(P,i) lost definiteness during the CDRE sweep (regime " +
                         std::to_string(i) + ", t = " + std::to_string(t_) + ")");
      const Mat l = care_L(*pb_, P, i);
      const Mat f =
          symmetrized(care_M(*pb_, P, i) - l * N.llt().solve(l.transpose()));
      dy.segment(i * n_ * n_, n_ * n_) = Eigen::Map<const Vec>(f.data(), n_ * n_);
    }
    return dy;
  }

  void step(double h_try) {
    double h = h_try;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Vec k1 = rhs(y_);
      const Vec k2 = rhs(y_ + h * kA21 * k1);
      const Vec k3 = rhs(y_ + h * (kA31 * k1 + kA32 * k2));
      const Vec k4 = rhs(y_ + h * (kA41 * k1 + kA42 * k2 + kA43 * k3));
      const Vec k5 = rhs(y_ + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4));
      const Vec k6 = rhs(y_ + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5));
      const Vec y5 = y_ + h * (kB1 * k1 + kB3 * k3 + kB4 * k4 + kB5 * k5 + kB6 * k6);
      const Vec k7 = rhs(y5);
      const Vec err_vec =
          h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);

      const double err = err_vec.norm();
      const double tol = opts_.abs_tol + opts_.rel_tol * std::max(y_.norm(), y5.norm());
      if (err <= tol) {
        t_ += h;
        CoupledMatrixSet next = unpack(y5, L_, n_);
        next.symmetrize();
        y_ = pack(next);
        if (y_.norm() > opts_.blowup_norm)
          throw Blowup("||P||_F exceeded " + std::to_string(opts_.blowup_norm) +
                       " at t = " + std::to_string(t_));
        const double grow = err > 0.0 ? 0.9 * std::pow(tol / err, 0.2) : 5.0;
        h_ = h * std::clamp(grow, 0.2, 5.0);
        return;
      }
      h *= std::max(0.2, 0.9 * std::pow(tol / err, 0.2));
    }
    throw Blowup("CDRE step control failed to find an acceptable step at t = " +
                 std::to_string(t_));
  }

  const ProblemSpec* pb_;
  CdreOptions opts_;
  int L_, n_;
  double t_, h_;
  Vec y_;
};

struct SweepResult {
  CoupledMatrixSet P;
  std::vector<CdreCheckpoint> checkpoints;
  bool converged = false;
};

double min_n_margin(const ProblemSpec& pb, const CoupledMatrixSet& P) {
  double margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < pb.num_regimes(); ++i)
    margin = std::min(margin, min_eig_sym(care_N(pb, P, i)));
  return margin;
}

double max_residual(const ProblemSpec& pb, const CoupledMatrixSet& P) {
  double r = 0.0;
  for (double v : care_residual_norms(pb, P)) r = std::max(r, v);
  return r;
}

/// Horizon-doubling sweep with G = 0: checkpoints at T = 1, 2, 4, ..., t_max,
/// stopping once consecutive checkpoints agree to conv_tol.
SweepResult doubling_sweep(const ProblemSpec& pb, double conv_tol, double t_max,
                           const CdreOptions& opts) {
  SweepResult sweep;
  CdreIntegrator integ(pb, CoupledMatrixSet::Zero(pb.num_regimes(), pb.n), opts);
  CoupledMatrixSet prev = CoupledMatrixSet::Zero(pb.num_regimes(), pb.n);
  for (double T = 1.0; T <= t_max + 0.5; T *= 2.0) {
    integ.advance_to(T);
    CoupledMatrixSet cur = integ.state();
    const double delta = cur.max_diff(prev);
    sweep.checkpoints.push_back({T, delta, max_residual(pb, cur), min_n_margin(pb, cur)});
    if (delta <= conv_tol) {
      sweep.P = std::move(cur);
      sweep.converged = true;
      return sweep;
    }
    prev = std::move(cur);
  }
  sweep.P = std::move(prev);
  return sweep;
}

FeedbackStrategy gains_from(const ProblemSpec& pb, const CoupledMatrixSet& P) {
  FeedbackStrategy s = FeedbackStrategy::Zero(pb.num_regimes(), pb.m, pb.n);
  for (int i = 0; i < pb.num_regimes(); ++i) {
    const Mat N = care_N(pb, P, i);
    if (min_eig_sym(N) <= 0.0)
      throw NBreakdown("N(P,i) is singular at the candidate solution (regime " +
                       std::to_string(i) + ")");
    s.theta[static_cast<size_t>(i)] = -N.llt().solve(care_L(pb, P, i).transpose());
  }
  return s;
}

}  // namespace

CoupledMatrixSet integrate_cdre(const ProblemSpec& pb, const CoupledMatrixSet& G, double T,
                                const CdreOptions& opts) {
  CdreIntegrator integ(pb, G, opts);
  integ.advance_to(T);
  return integ.state();
}

std::vector<CoupledMatrixSet> integrate_cdre_checkpoints(const ProblemSpec& pb,
                                                         const CoupledMatrixSet& G,
                                                         const std::vector<double>& horizons,
                                                         const CdreOptions& opts) {
  CdreIntegrator integ(pb, G, opts);
  std::vector<CoupledMatrixSet> out;
  for (double T : horizons) {
    integ.advance_to(T);
    out.push_back(integ.state());
  }
  return out;
}

CoupledMatrixSet newton_refine(const ProblemSpec& pb, const CoupledMatrixSet& P0,
                               double residual_tol, int max_iters, SolveTrace* trace) {
  CoupledMatrixSet P = P0;
  P.symmetrize();
  double resid = max_residual(pb, P);
  for (int iter = 1; iter <= max_iters && resid > residual_tol; ++iter) {
    FeedbackStrategy gains;
    try {
      gains = gains_from(pb, P);
    } catch (const NBreakdown&) {
      break;  // cannot form the closed loop; best iterate stands
    }
    LinearSystem sys;
    sys.generator = pb.generator;
    for (int i = 0; i < pb.num_regimes(); ++i) {
      sys.Abar.push_back(closed_loop_A(pb, gains, i));
      sys.Cbar.push_back(closed_loop_C(pb, gains, i));
    }
    CoupledMatrixSet residual_set;
    for (int i = 0; i < pb.num_regimes(); ++i)
      residual_set.entries.push_back(care_residual(pb, P, i));

    CoupledMatrixSet delta;
    try {
      delta = solve_coupled_lyapunov(sys, residual_set);
    } catch (const SingularOperator&) {
      break;  // iterate's closed loop sits on the stability boundary
    }
    CoupledMatrixSet P_next = P;
    for (int i = 0; i < pb.num_regimes(); ++i) P_next[i] += delta[i];
    P_next.symmetrize();

    const double resid_next = max_residual(pb, P_next);
    if (trace) trace->newton.push_back({iter, resid_next});
    if (resid_next >= resid) break;  // last iterate before the increase wins

    P = std::move(P_next);
    resid = resid_next;
  }
  return P;
}

ProblemSpec shift_problem(const ProblemSpec& pb, const FeedbackStrategy& sigma) {
  if (sigma.regimes() != pb.num_regimes())
    throw ValidationError("stabilizer has the wrong number of regimes");
  ProblemSpec out = pb;
  for (int i = 0; i < pb.num_regimes(); ++i) {
    const Mat& sg = sigma.theta[static_cast<size_t>(i)];
    if (sg.rows() != pb.m || sg.cols() != pb.n)
      throw ValidationError("stabilizer gain has wrong dimensions in regime " + std::to_string(i));
    const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
    RegimeData& od = out.regimes[static_cast<size_t>(i)];
    od.A = rd.A + rd.B * sg;
    od.C = rd.C + rd.D * sg;
    od.Q = symmetrized(rd.Q + rd.S.transpose() * sg + sg.transpose() * rd.S +
                       sg.transpose() * rd.R * sg);
    od.S = rd.S + rd.R * sg;
    if (rd.q) od.q = *rd.q + sg.transpose() * *rd.rho;
  }
  return out;
}

FeedbackStrategy synthesize_stabilizer(const ProblemSpec& pb, const CareOptions& opts) {
  ProblemSpec normalized = pb;
  normalized.discount_r = 0.0;
  for (RegimeData& rd : normalized.regimes) {
    rd.Q = Mat::Identity(pb.n, pb.n);
    rd.R = Mat::Identity(pb.m, pb.m);
    rd.S = Mat::Zero(pb.m, pb.n);
    rd.b.reset();
    rd.sigma.reset();
    rd.q.reset();
    rd.rho.reset();
  }

  SweepResult sweep;
  try {
    sweep = doubling_sweep(normalized, opts.convergence_tol, opts.t_max, opts.cdre);
  } catch (const Blowup&) {
    throw NotStabilizable("normalized CDRE sweep diverged; the system admits no stabilizer");
  }

  // Slowly converging sweeps (closed-loop margin near zero) may run out of
  // horizon; the gain of the best iterate is still a candidate, and the
  // certificate below is what actually decides.
  FeedbackStrategy gamma;
  try {
    gamma = gains_from(normalized, sweep.P);
  } catch (const NBreakdown&) {
    throw NotStabilizable("normalized sweep produced a singular N; no stabilizer found");
  }
  const StabilityCertificate cert = check_l2_stable(closed_loop_system(pb, gamma));
  if (!cert.stable)
    throw NotStabilizable(sweep.converged
                              ? "synthesized gain failed the closed-loop stability certificate"
                              : "normalized CDRE sweep did not converge by T = " +
                                    std::to_string(opts.t_max));
  return gamma;
}

CareSolution solve_care(const ProblemSpec& pb, const CareOptions& opts) {
  const auto t_start = std::chrono::steady_clock::now();

  FeedbackStrategy sigma;
  if (opts.forced_stabilizer) {
    sigma = *opts.forced_stabilizer;
    if (!check_l2_stable(closed_loop_system(pb, sigma)).stable)
      throw ValidationError("supplied stabilizer does not stabilize the system");
  } else if (check_l2_stable(open_loop_system(pb)).stable) {
    sigma = FeedbackStrategy::Zero(pb.num_regimes(), pb.m, pb.n);
  } else {
    sigma = synthesize_stabilizer(pb, opts);
  }

  const ProblemSpec shifted = shift_problem(pb, sigma);

  // A sweep that runs out of horizon (slow closed-loop margin) still lands in
  // the Newton basin; the residual check after refinement is the gate.
  SweepResult sweep = doubling_sweep(shifted, opts.convergence_tol, opts.t_max, opts.cdre);

  CareSolution sol;
  sol.trace.checkpoints = std::move(sweep.checkpoints);
  sol.P = newton_refine(shifted, sweep.P, opts.residual_tol, opts.max_newton_iters, &sol.trace);
  if (max_residual(shifted, sol.P) > std::max(opts.residual_tol, 1e-9))
    throw Error("CDRE sweep did not converge by T = " + std::to_string(opts.t_max) +
                " and Newton refinement could not close the residual");

  // Gains of the shifted problem, composed back: Theta = Theta_Sigma + Sigma.
  sol.theta = gains_from(shifted, sol.P);
  for (int i = 0; i < pb.num_regimes(); ++i)
    sol.theta.theta[static_cast<size_t>(i)] += sigma.theta[static_cast<size_t>(i)];

  sol.residuals = care_residual_norms(pb, sol.P);
  for (int i = 0; i < pb.num_regimes(); ++i)
    sol.n_margins.push_back(min_eig_sym(care_N(pb, sol.P, i)));

  sol.stabilizing = check_l2_stable(closed_loop_system(pb, sol.theta)).stable;
  if (!sol.stabilizing) {
    double worst = 0.0;
    for (double r : sol.residuals) worst = std::max(worst, r);
    throw NotStabilizingSolution("converged P does not stabilize the closed loop (max residual " +
                                 std::to_string(worst) + ")");
  }

  sol.meta.tol_convergence = opts.convergence_tol;
  sol.meta.tol_residual = opts.residual_tol;
  sol.meta.newton_iterations = static_cast<int>(sol.trace.newton.size());
  sol.meta.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return sol;
}

CareSolution solve_care_eps_homotopy(const ProblemSpec& pb, double eps0, const CareOptions& opts) {
  const auto t_start = std::chrono::steady_clock::now();
  constexpr double kHomotopyTol = 1e-7;
  constexpr double kEpsFloor = 1e-10;
  constexpr double kDivergenceNorm = 1e10;

  auto with_eps = [&](double eps) {
    ProblemSpec out = pb;
    for (RegimeData& rd : out.regimes) rd.R += eps * Mat::Identity(pb.m, pb.m);
    return out;
  };

  CareSolution sol;
  CoupledMatrixSet P_prev;
  bool have_prev = false;
  double eps = eps0;
  while (true) {
    const ProblemSpec pb_eps = with_eps(eps);
    CoupledMatrixSet P_eps;
    if (have_prev) {
      // Warm start: polish the previous leg's solution on the new weights;
      // fall back to a full solve when the polish stalls.
      P_eps = newton_refine(pb_eps, P_prev, opts.residual_tol, opts.max_newton_iters, nullptr);
      if (max_residual(pb_eps, P_eps) > 1e-8) P_eps = solve_care(pb_eps, opts).P;
    } else {
      P_eps = solve_care(pb_eps, opts).P;
    }
    if (P_eps.max_norm() > kDivergenceNorm)
      throw HomotopyDiverged("P_eps norm grew beyond " + std::to_string(kDivergenceNorm) +
                             "; the problem is not convex");
    sol.trace.checkpoints.push_back(
        {eps, have_prev ? P_eps.max_diff(P_prev) : 0.0, max_residual(pb, P_eps),
         min_n_margin(pb, P_eps)});

    if (have_prev && P_eps.max_diff(P_prev) <= kHomotopyTol) {
      P_prev = std::move(P_eps);
      break;
    }
    P_prev = std::move(P_eps);
    have_prev = true;
    if (eps < kEpsFloor) break;
    eps *= 0.5;
  }

  sol.P = P_prev;
  const CareVerification verification = verify_care(pb, sol.P);
  sol.theta = verification.gain;
  sol.residuals = verification.residual_care;
  sol.n_margins = verification.n_min_eigs;
  sol.stabilizing = verification.gain_stabilizes;
  sol.meta.tol_convergence = kHomotopyTol;
  sol.meta.tol_residual = opts.residual_tol;
  sol.meta.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return sol;
}

CareVerification verify_care(const ProblemSpec& pb, const CoupledMatrixSet& P,
                             const std::vector<Mat>* Pi) {
  constexpr double kResidualTol = 1e-8;
  constexpr double kNMinTol = -1e-10;

  CareVerification v;
  v.gain = FeedbackStrategy::Zero(pb.num_regimes(), pb.m, pb.n);
  bool residuals_ok = true;
  for (int i = 0; i < pb.num_regimes(); ++i) {
    const Mat M = care_M(pb, P, i);
    const Mat l = care_L(pb, P, i);
    const Mat N = care_N(pb, P, i);
    const Mat Npinv = sym_pinv(N);
    const double r_care = (M - l * Npinv * l.transpose()).norm();
    const double r_range = (l * (Mat::Identity(pb.m, pb.m) - N * Npinv)).norm();
    const double n_min = min_eig_sym(N);
    v.residual_care.push_back(r_care);
    v.residual_range.push_back(r_range);
    v.n_min_eigs.push_back(n_min);
    residuals_ok = residuals_ok && r_care <= kResidualTol && r_range <= kResidualTol &&
                   n_min >= kNMinTol;

    Mat gain = -Npinv * l.transpose();
    if (Pi)
      gain += (Mat::Identity(pb.m, pb.m) - Npinv * N) * (*Pi)[static_cast<size_t>(i)];
    v.gain.theta[static_cast<size_t>(i)] = std::move(gain);
  }
  v.gain_stabilizes = check_l2_stable(closed_loop_system(pb, v.gain)).stable;
  v.accepted = residuals_ok && v.gain_stabilizes;
  return v;
}

}  // namespace mjlq
