#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace feedcap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Raised when a recursion or factorization leaves the numerically valid
/// region (loss of positivity, non-finite values, divergence).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInputPsdTolerance = 1e-10;
inline constexpr double kTracePsdTolerance = 1e-9;

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Smallest eigenvalue of the symmetric part of `m`. Empty matrices report 0.
inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// PSD test with a tolerance relative to the matrix scale.
inline bool is_psd(const Matrix& m, double tol = kInputPsdTolerance) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
  return min_eigenvalue(m) >= -tol * scale;
}

/// Returns F with F Fᵀ = m for symmetric PSD m. Uses Cholesky when m is
/// positive definite and a clipped eigen-decomposition otherwise.
inline Matrix psd_factor(const Matrix& m) {
  const Matrix s = symmetrized(m);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

/// Lower-triangular L with L Lᵀ = m for symmetric PSD m, tolerating zero
/// pivots. Row t of L expresses the t-th coordinate through the normalized
/// innovations of the leading coordinates, so L(t, t) is the standard
/// deviation of coordinate t given coordinates 0..t-1.
inline Matrix psd_cholesky(const Matrix& m, double tol = 1e-13) {
  const Eigen::Index n = m.rows();
  const Matrix s = symmetrized(m);
  const double scale = std::max(1.0, n > 0 ? s.diagonal().cwiseAbs().maxCoeff() : 1.0);
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = s(j, j) - l.row(j).head(j).squaredNorm();
    if (pivot <= tol * scale) {
      // Semidefinite direction: coordinate j is determined by its predecessors.
      for (Eigen::Index i = j + 1; i < n; ++i) l(i, j) = 0.0;
      l(j, j) = 0.0;
      continue;
    }
    const double d = std::sqrt(pivot);
    l(j, j) = d;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (s(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / d;
    }
  }
  return l;
}

/// log det of a symmetric positive definite matrix.
inline double log_det_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("log_det_spd: matrix is not positive definite");
  }
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  }
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace feedcap
