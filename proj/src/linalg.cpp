#include "proxyopt/linalg.hpp"

#include "proxyopt/errors.hpp"

#include <cmath>
#include <string>

namespace proxyopt {

std::size_t dim_from_lower_size(std::size_t count) {
  std::size_t dim = 0;
  while (lower_size(dim) < count) ++dim;
  if (lower_size(dim) != count) {
    throw ValidationError("lower-triangle length " + std::to_string(count) +
                          " is not a triangular number");
  }
  return dim;
}

std::vector<double> pack_lower(const Matrix& m) {
  std::vector<double> out;
  out.reserve(lower_size(static_cast<std::size_t>(m.rows())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) out.push_back(m(i, j));
  return out;
}

Matrix unpack_lower(std::span<const double> lower, std::size_t dim) {
  if (lower.size() != lower_size(dim)) {
    throw ValidationError("expected " + std::to_string(lower_size(dim)) +
                          " lower-triangle entries, got " + std::to_string(lower.size()));
  }
  const auto n = static_cast<Eigen::Index>(dim);
  Matrix m(n, n);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      m(i, j) = lower[k];
      m(j, i) = lower[k];
      ++k;
    }
  }
  return m;
}

Vector to_vector(std::span<const double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

double asymmetry(const Matrix& m) {
  const double scale = std::max(m.norm(), 1e-300);
  return (m - m.transpose()).norm() / scale;
}

bool is_symmetric(const Matrix& m, double rel_tol) {
  return m.rows() == m.cols() && asymmetry(m) <= rel_tol;
}

double min_eigenvalue(const Matrix& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(sym), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

bool is_psd(const Matrix& sym, double rel_tol) {
  return min_eigenvalue(sym) >= -rel_tol * std::abs(sym.trace());
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix project_psd(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(sym));
  const Vector clamped = eig.eigenvalues().cwiseMax(0.0);
  return symmetrize(eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose());
}

Matrix psd_factor(const Matrix& cov) {
  if (!is_symmetric(cov)) throw ValidationError("covariance matrix is not symmetric");
  if (cov.size() == 0) return cov;
  if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Matrix> llt(symmetrize(cov));
  if (llt.info() == Eigen::Success) {
    Matrix l = llt.matrixL();
    if (l.allFinite()) return l;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(cov));
  const double lo = eig.eigenvalues().minCoeff();
  if (lo < -1e-9 * std::abs(cov.trace())) {
    throw ValidationError("covariance matrix is not positive semidefinite (min eigenvalue " +
                          std::to_string(lo) + ")");
  }
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

}  // namespace proxyopt
