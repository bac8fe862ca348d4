#pragma once

#include "proxyopt/denoise.hpp"

#include <optional>

namespace proxyopt {

/// Simplex weights over the d proxies and the composite proxy quality they reach.
struct ProxyWeights {
  Vector w;
  double rho = 0;
};

/// min x^T sigma x  s.t.  x >= 0, r^T x = 1.
struct QPProblem {
  Matrix sigma;
  Vector r;

  void validate() const;
};

struct QPSolution {
  Vector x;
  /// Multiplier of the equality constraint: 2 sigma x - nu r >= 0, = 0 on the support.
  double nu = 0;
  double objective = 0;
};

enum class QPAlgorithm {
  Auto,         ///< enumeration for d <= 3, active set otherwise
  Enumeration,  ///< exact over all 2^d - 1 supports
  ActiveSet,    ///< primal active-set iteration
};

/// corr(Delta^N, Delta_hat^P) for a single proxy.
double proxy_quality_single(double corr_np, double var_p, double xi_pp);

/// corr(Delta^N, w^T Delta_hat^P) under the latent model.
double composite_quality(const Vector& w, const LatentParams& latent, const Matrix& xi_pp);

QPSolution solve_qp(const QPProblem& problem, QPAlgorithm algorithm = QPAlgorithm::Auto);

/// Maximizes composite_quality over the simplex through the QP with
/// sigma = lambda_pp + xi_pp and r = lambda_np, w = x / |x|_1.
ProxyWeights optimize_weights(const LatentParams& latent, const Matrix& xi_pp,
                              QPAlgorithm algorithm = QPAlgorithm::Auto);

/// Pr(Delta^N > 0, w^T Delta_hat^P > 0) = 1/4 + asin(rho) / (2 pi) for a
/// centered bivariate normal with correlation rho.
double alignment_probability(double rho);

}  // namespace proxyopt
