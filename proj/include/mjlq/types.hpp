#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace mjlq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Generator matrix of the continuous-time Markov chain driving the regime
/// switches. Off-diagonal entries are jump rates (1/time), rows sum to zero.
struct Generator {
  Mat pi;

  int regimes() const { return static_cast<int>(pi.rows()); }
  double rate_out(int i) const { return -pi(i, i); }
};

/// L-indexed family of n-by-n symmetric matrices (P, Lambda, witnesses, ...).
struct CoupledMatrixSet {
  std::vector<Mat> entries;

  CoupledMatrixSet() = default;
  explicit CoupledMatrixSet(std::vector<Mat> e) : entries(std::move(e)) {}

  int regimes() const { return static_cast<int>(entries.size()); }
  int dim() const { return entries.empty() ? 0 : static_cast<int>(entries[0].rows()); }

  Mat& operator[](int i) { return entries[static_cast<size_t>(i)]; }
  const Mat& operator[](int i) const { return entries[static_cast<size_t>(i)]; }

  void symmetrize() {
    for (Mat& e : entries) e = 0.5 * (e + e.transpose()).eval();
  }

  /// max_i ||entries[i] - other.entries[i]||_F
  double max_diff(const CoupledMatrixSet& other) const {
    double d = 0.0;
    for (int i = 0; i < regimes(); ++i) d = std::max(d, (entries[i] - other.entries[i]).norm());
    return d;
  }

  double max_norm() const {
    double d = 0.0;
    for (const Mat& e : entries) d = std::max(d, e.norm());
    return d;
  }

  static CoupledMatrixSet Zero(int L, int n) {
    CoupledMatrixSet s;
    s.entries.assign(static_cast<size_t>(L), Mat::Zero(n, n));
    return s;
  }
  static CoupledMatrixSet Identity(int L, int n) {
    CoupledMatrixSet s;
    s.entries.assign(static_cast<size_t>(L), Mat::Identity(n, n));
    return s;
  }
};

/// Coefficients of one regime: dynamics (A,B,C,D), weights (Q,S,R) and the
/// optional regime-constant offsets (b, sigma) and linear costs (q, rho).
struct RegimeData {
  Mat A;  // n x n drift gain
  Mat B;  // n x m control drift gain
  Mat C;  // n x n diffusion gain
  Mat D;  // n x m control diffusion gain
  Mat Q;  // n x n state weight, symmetric
  Mat S;  // m x n cross weight
  Mat R;  // m x m control weight, symmetric
  std::optional<Vec> b;      // n, constant drift offset
  std::optional<Vec> sigma;  // n, constant diffusion offset
  std::optional<Vec> q;      // n, linear state cost
  std::optional<Vec> rho;    // m, linear control cost
};

/// A full regime-switching LQ instance.
struct ProblemSpec {
  int n = 0;  // state dimension
  int m = 0;  // control dimension
  Generator generator;
  std::vector<RegimeData> regimes;
  double discount_r = 0.0;

  int num_regimes() const { return static_cast<int>(regimes.size()); }

  /// True when the regime-constant offsets b, sigma, q, rho are present.
  /// Validation guarantees all-or-none across regimes and fields.
  bool inhomogeneous() const {
    return !regimes.empty() && regimes.front().b.has_value();
  }
};

/// Per-regime feedback gains Theta plus stationary offsets nu:
/// u(t) = Theta(alpha_t) X(t) + nu(alpha_t).
struct FeedbackStrategy {
  std::vector<Mat> theta;  // L entries, m x n
  std::vector<Vec> nu;     // L entries, m (all-zero for homogeneous problems)

  int regimes() const { return static_cast<int>(theta.size()); }

  bool has_offsets() const {
    for (const Vec& v : nu)
      if (v.norm() > 0.0) return true;
    return false;
  }

  static FeedbackStrategy Zero(int L, int m, int n) {
    FeedbackStrategy s;
    s.theta.assign(static_cast<size_t>(L), Mat::Zero(m, n));
    s.nu.assign(static_cast<size_t>(L), Vec::Zero(m));
    return s;
  }
};

}  // namespace mjlq
