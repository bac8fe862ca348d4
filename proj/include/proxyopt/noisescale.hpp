#pragma once

#include "proxyopt/corpus.hpp"

namespace proxyopt {

/// Within-experiment covariance of a size-one experiment; Xi(n) = xi_ref / n.
struct NoiseModel {
  Matrix xi_ref;
  std::size_t source_count = 0;

  void validate() const;
};

enum class NoiseWeighting {
  Precision,  ///< gamma_i proportional to n_i
  Equal,      ///< gamma_i = 1 / K
};

/// xi_ref = sum_i gamma_i n_i xi_hat_i with convex weights gamma.
NoiseModel estimate_xi_ref(const Corpus& corpus, NoiseWeighting weighting = NoiseWeighting::Precision);

/// xi_ref / n (full (d+1) x (d+1) matrix).
Matrix predict_xi(const NoiseModel& model, std::int64_t n);

/// Proxy-proxy block of predict_xi.
Matrix predict_xi_pp(const NoiseModel& model, std::int64_t n);

struct PowerLawFit {
  double exponent = 0;
  double log_prefactor = 0;
  double r_squared = 0;
};

/// OLS of log xi_hat_i[m,m] on log n_i. An exponent near -1 supports the 1/n law.
PowerLawFit fit_power_law(const Corpus& corpus, std::size_t metric_index);

}  // namespace proxyopt
