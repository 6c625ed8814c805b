#pragma once

#include <span>

#include "mjlq/types.hpp"

namespace mjlq {

inline Mat symmetrized(const Mat& a) { return 0.5 * (a + a.transpose()); }

/// Smallest / largest eigenvalue of a symmetric matrix.
double min_eig_sym(const Mat& a);
double max_eig_sym(const Mat& a);

/// Moore-Penrose pseudoinverse of a symmetric matrix via eigendecomposition.
/// Eigenvalues below rank_tol_factor * max-eigenvalue are treated as zero.
Mat sym_pinv(const Mat& a, double rank_tol_factor = 1e-9);

/// Deterministic pairwise-tree summation; result is independent of how the
/// values were produced, so any worker count yields identical bits.
double pairwise_sum(std::span<const double> values);

/// Scale-aware positive definiteness test: min eigenvalue > tol * (1 + ||a||_F).
bool is_positive_definite(const Mat& a, double tol = 1e-12);

}  // namespace mjlq
