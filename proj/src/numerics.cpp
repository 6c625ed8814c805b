#include "mjlq/numerics.hpp"

#include <Eigen/Eigenvalues>

#include "mjlq/errors.hpp"

namespace mjlq {

namespace {
Eigen::SelfAdjointEigenSolver<Mat> eig_of(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(a));
  if (es.info() != Eigen::Success) throw EigenFailure("symmetric eigendecomposition failed");
  return es;
}
}  // namespace

double min_eig_sym(const Mat& a) { return eig_of(a).eigenvalues().minCoeff(); }

double max_eig_sym(const Mat& a) { return eig_of(a).eigenvalues().maxCoeff(); }

Mat sym_pinv(const Mat& a, double rank_tol_factor) {
  const auto es = eig_of(a);
  const Vec& lam = es.eigenvalues();
  const double tol = rank_tol_factor * lam.maxCoeff();
  Vec inv_lam = Vec::Zero(lam.size());
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (lam(k) > tol && tol > 0.0) inv_lam(k) = 1.0 / lam(k);
  return es.eigenvectors() * inv_lam.asDiagonal() * es.eigenvectors().transpose();
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

bool is_positive_definite(const Mat& a, double tol) {
  return min_eig_sym(a) > tol * (1.0 + a.norm());
}

}  // namespace mjlq
