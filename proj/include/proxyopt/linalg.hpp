#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace proxyopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Number of entries in the lower triangle (with diagonal) of a dim x dim matrix.
constexpr std::size_t lower_size(std::size_t dim) { return dim * (dim + 1) / 2; }

/// Inverse of lower_size; throws ValidationError when count is not triangular.
std::size_t dim_from_lower_size(std::size_t count);

/// Row-major lower triangle: (0,0), (1,0), (1,1), (2,0), ...
std::vector<double> pack_lower(const Matrix& m);
Matrix unpack_lower(std::span<const double> lower, std::size_t dim);

Vector to_vector(std::span<const double> values);
std::vector<double> to_std(const Vector& v);

/// Relative Frobenius asymmetry ||A - A^T|| / max(||A||, tiny).
double asymmetry(const Matrix& m);
bool is_symmetric(const Matrix& m, double rel_tol = 1e-9);

double min_eigenvalue(const Matrix& sym);

/// PSD in the sense min eigenvalue >= -rel_tol * |trace|.
bool is_psd(const Matrix& sym, double rel_tol = 1e-9);

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clamped to 0).
Matrix project_psd(const Matrix& sym);

Matrix symmetrize(const Matrix& m);

/// Factor F with F F^T = cov. Cholesky when possible, otherwise the
/// eigendecomposition with negative eigenvalues clamped to 0 (only accepted
/// when min eigenvalue >= -1e-9 * trace). Throws ValidationError for
/// non-symmetric or clearly indefinite input.
Matrix psd_factor(const Matrix& cov);

}  // namespace proxyopt
