#include "proxyopt/correlation_transform.hpp"

#include "proxyopt/errors.hpp"

#include <cmath>
#include <numbers>

namespace proxyopt::corr {

namespace {

// log(1 - tanh(z)^2) without cancellation.
double log_sech2(double z) {
  const double a = std::abs(z);
  return 2.0 * (std::numbers::ln2 - a - std::log1p(std::exp(-2.0 * a)));
}

}  // namespace

Factor from_unconstrained(std::span<const double> z, std::size_t p) {
  if (z.size() != num_params(p)) throw ValidationError("correlation coordinate count mismatch");
  const auto n = static_cast<Eigen::Index>(p);
  Factor out{Matrix::Zero(n, n), 0.0};
  Matrix& l = out.cholesky;
  l(0, 0) = 1.0;
  std::size_t k = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < i; ++j, ++k) {
      const double y = std::tanh(z[k]);
      const double rem2 = 1.0 - acc;
      out.log_jacobian += log_sech2(z[k]);
      if (j > 0) out.log_jacobian += 0.5 * std::log(rem2);
      l(i, j) = y * std::sqrt(rem2);
      acc += l(i, j) * l(i, j);
    }
    l(i, i) = std::sqrt(std::max(1.0 - acc, 0.0));
  }
  return out;
}

Vector to_unconstrained(const Matrix& cholesky) {
  const auto n = cholesky.rows();
  Vector z(static_cast<Eigen::Index>(num_params(static_cast<std::size_t>(n))));
  Eigen::Index k = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < i; ++j, ++k) {
      const double rem = std::sqrt(std::max(1.0 - acc, 0.0));
      const double y = rem > 0.0 ? cholesky(i, j) / rem : 0.0;
      z(k) = std::atanh(std::clamp(y, -1.0 + 1e-15, 1.0 - 1e-15));
      acc += cholesky(i, j) * cholesky(i, j);
    }
  }
  return z;
}

double log_jacobian_cholesky_to_corr(const Matrix& cholesky) {
  const auto n = cholesky.rows();
  double out = 0.0;
  for (Eigen::Index i = 1; i < n; ++i) out += static_cast<double>(n - 1 - i) * std::log(cholesky(i, i));
  return out;
}

Vector backprop(std::span<const double> z, const Matrix& cholesky, const Matrix& grad_l,
                double lkj_weight) {
  const auto n = cholesky.rows();
  Vector gz(static_cast<Eigen::Index>(z.size()));
  // Row i contributes (p-1-i) log L_ii + 2 * lkj_weight * log L_ii, and
  // log L_ii = 0.5 log(1 - acc_i).
  Eigen::Index row_start = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    // Forward quantities for the row.
    std::vector<double> acc(static_cast<std::size_t>(i) + 1, 0.0);
    for (Eigen::Index j = 0; j < i; ++j)
      acc[static_cast<std::size_t>(j) + 1] = acc[static_cast<std::size_t>(j)] + cholesky(i, j) * cholesky(i, j);
    const double diag = cholesky(i, i);
    const double alpha = 0.5 * (static_cast<double>(n - 1 - i) + 2.0 * lkj_weight);
    double acc_bar = grad_l(i, i) * (-0.5 / diag) - alpha / (1.0 - acc[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = i - 1; j >= 0; --j) {
      const auto ju = static_cast<std::size_t>(j);
      const double zz = z[static_cast<std::size_t>(row_start + j)];
      const double y = std::tanh(zz);
      const double rem = std::sqrt(1.0 - acc[ju]);
      const double l_bar = grad_l(i, j) + acc_bar * 2.0 * cholesky(i, j);
      const double y_bar = l_bar * rem;
      const double rem_bar = l_bar * y;
      acc_bar += rem_bar * (-0.5 / rem);
      if (j > 0) acc_bar += -0.5 / (1.0 - acc[ju]);
      gz(row_start + j) = y_bar * (1.0 - y * y) - 2.0 * y;
    }
    row_start += i;
  }
  return gz;
}

}  // namespace proxyopt::corr
