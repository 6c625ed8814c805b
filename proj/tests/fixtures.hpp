#pragma once

#include <filesystem>
#include <optional>
#include <random>

#include "mjlq/model_io.hpp"
#include "mjlq/types.hpp"

namespace mjlq::testing {

inline std::filesystem::path data_dir() { return MJLQ_TEST_DATA_DIR; }

/// Scalar-state, two-control, three-regime instance with a known solution.
inline ProblemSpec scalar3_problem() {
  return load_problem(data_dir() / "switching_scalar_3regime.json");
}

/// Two-dimensional discounted (r = 0.2) three-regime instance.
inline ProblemSpec planar3_problem() {
  return load_problem(data_dir() / "discounted_planar_3regime.json");
}

// Pinned values for the scalar3 instance.
inline const double kScalar3P[3] = {7.44607347, 2.81837045, 19.16846222};
inline Mat scalar3_theta(int i) {
  Mat t(2, 1);
  if (i == 0) t << -1.6350, 1.4994;
  if (i == 1) t << -1.2202, -0.4055;
  if (i == 2) t << -1.7918, -2.4117;
  return t;
}

/// A hand-picked stabilizer for the scalar3 instance.
inline FeedbackStrategy scalar3_known_stabilizer() {
  FeedbackStrategy s = FeedbackStrategy::Zero(3, 2, 1);
  s.theta[0] << 0, 2;
  s.theta[1] << -1, 0;
  s.theta[2] << -2, -2;
  return s;
}

// Pinned values for the planar3 instance (after the discount reduction).
inline Mat planar3_P(int i) {
  Mat p(2, 2);
  if (i == 0) p << 0.2824, 0.0953, 0.0953, 0.3082;
  if (i == 1) p << 0.2769, 0.0583, 0.0583, 0.2940;
  if (i == 2) p << 0.1998, 0.0575, 0.0575, 0.2155;
  return p;
}
inline Mat planar3_theta(int i) {
  Mat t(2, 2);
  if (i == 0) t << 0.1074, -0.2087, -0.0694, -0.0573;
  if (i == 1) t << 0.5739, -0.2677, 0.0640, -0.0308;
  if (i == 2) t << -0.1907, -0.3502, 0.0297, 0.1535;
  return t;
}

/// Single-regime scalar problem (n = m = L = 1), the workhorse of the
/// closed-form oracle suite.
inline ProblemSpec scalar_problem(double A, double B, double C, double D, double Q, double S,
                                  double R) {
  ProblemSpec pb;
  pb.n = pb.m = 1;
  pb.generator.pi = Mat::Zero(1, 1);
  RegimeData rd;
  rd.A = Mat::Constant(1, 1, A);
  rd.B = Mat::Constant(1, 1, B);
  rd.C = Mat::Constant(1, 1, C);
  rd.D = Mat::Constant(1, 1, D);
  rd.Q = Mat::Constant(1, 1, Q);
  rd.S = Mat::Constant(1, 1, S);
  rd.R = Mat::Constant(1, 1, R);
  pb.regimes.push_back(rd);
  return pb;
}

/// Closed-form stabilizing solution of the scalar algebraic equation
///   (2A + C^2) P + Q - (P B + C P D + S)^2 / (R + D^2 P) = 0,
/// i.e. the root of a P^2 + b P + c with
///   a = (2A + C^2) D^2 - (B + C D)^2,
///   b = (2A + C^2) R + Q D^2 - 2 S (B + C D),
///   c = Q R - S^2,
/// selected so that N = R + D^2 P > 0 and the closed loop is stable.
/// Empty when no stabilizing root exists.
inline std::optional<double> scalar_care_oracle(double A, double B, double C, double D, double Q,
                                                double S, double R) {
  const double g = 2.0 * A + C * C;
  const double bc = B + C * D;
  const double a = g * D * D - bc * bc;
  const double b = g * R + Q * D * D - 2.0 * S * bc;
  const double c = Q * R - S * S;

  std::vector<double> roots;
  if (std::abs(a) < 1e-14) {
    if (std::abs(b) > 1e-14) roots.push_back(-c / b);
  } else {
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    roots.push_back((-b + sq) / (2.0 * a));
    roots.push_back((-b - sq) / (2.0 * a));
  }
  for (double p : roots) {
    const double N = R + D * D * p;
    if (N <= 0.0) continue;
    const double theta = -(p * B + C * p * D + S) / N;
    const double closed = 2.0 * (A + B * theta) + (C + D * theta) * (C + D * theta);
    if (closed < 0.0) return p;
  }
  return std::nullopt;
}

/// Random scalar instance satisfying the standard condition R > 0,
/// Q - S^2/R >= 0, with a controllable channel.
inline ProblemSpec random_convex_scalar(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> upos(0.3, 2.5);
  const double A = u(gen), C = u(gen);
  double B = u(gen), D = u(gen);
  if (std::abs(B) + std::abs(D) < 0.3) B += 1.0;
  const double R = upos(gen);
  const double S = u(gen);
  const double Q = S * S / R + upos(gen);
  return scalar_problem(A, B, C, D, Q, S, R);
}

/// Random valid generator: off-diagonal rates uniform in [0, 1.5], diagonal
/// pinned to minus the row sum.
inline Mat random_generator(std::mt19937_64& gen, int L) {
  std::uniform_real_distribution<double> u(0.0, 1.5);
  Mat pi = Mat::Zero(L, L);
  for (int i = 0; i < L; ++i) {
    double row = 0.0;
    for (int j = 0; j < L; ++j) {
      if (i == j) continue;
      pi(i, j) = u(gen);
      row += pi(i, j);
    }
    pi(i, i) = -row;
  }
  return pi;
}

inline Mat random_matrix(std::mt19937_64& gen, int rows, int cols, double lo = -2.0,
                         double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = u(gen);
  return m;
}

}  // namespace mjlq::testing
