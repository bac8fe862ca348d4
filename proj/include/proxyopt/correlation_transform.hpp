#pragma once

#include "proxyopt/linalg.hpp"

#include <span>

namespace proxyopt {

/// Unconstrained coordinates for a p x p correlation matrix through its
/// Cholesky factor (canonical partial correlations, y = tanh(z)).
///
/// Coordinates are ordered row-major over the strict lower triangle:
/// (1,0), (2,0), (2,1), (3,0), ...
namespace corr {

constexpr std::size_t num_params(std::size_t p) { return p * (p - 1) / 2; }

struct Factor {
  Matrix cholesky;        ///< lower triangular, unit row norms
  double log_jacobian{};  ///< log |d vech(L) / dz|
};

Factor from_unconstrained(std::span<const double> z, std::size_t p);

/// Inverse map. Requires a valid Cholesky factor of a correlation matrix.
Vector to_unconstrained(const Matrix& cholesky);

/// Adjoint of a scalar objective through the transform.
///
/// Objective = f(L) + Jacobian terms + lkj_weight * log det C, where
/// dL holds df/dL (lower triangle used). Returns d objective / dz.
Vector backprop(std::span<const double> z, const Matrix& cholesky, const Matrix& grad_l,
                double lkj_weight);

/// log det of the Jacobian of L -> C = L L^T on the correlation manifold:
/// sum_i (p - 1 - i) log L_ii.
double log_jacobian_cholesky_to_corr(const Matrix& cholesky);

}  // namespace corr
}  // namespace proxyopt
