#include "proxyopt/portfolio.hpp"

#include "proxyopt/errors.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace proxyopt {

double proxy_quality_single(double corr_np, double var_p, double xi_pp) {
  if (!(var_p > 0)) throw ValidationError("proxy_quality_single: latent proxy variance must be positive");
  if (!(xi_pp >= 0)) throw ValidationError("proxy_quality_single: noise variance must be nonnegative");
  if (!(std::abs(corr_np) <= 1.0)) throw ValidationError("proxy_quality_single: |corr| must be <= 1");
  if (std::isinf(xi_pp)) return 0.0;
  return corr_np / std::sqrt(1.0 + xi_pp / var_p);
}

double composite_quality(const Vector& w, const LatentParams& latent, const Matrix& xi_pp) {
  const auto d = static_cast<Eigen::Index>(latent.dim()) - 1;
  if (w.size() != d || xi_pp.rows() != d || xi_pp.cols() != d)
    throw ValidationError("composite_quality: dimension mismatch");
  const double var_n = latent.lambda_nn();
  if (!(var_n > 0)) throw NumericalError("composite_quality: latent long-term variance is not positive");
  const double risk = w.dot((latent.lambda_pp() + xi_pp) * w);
  if (!(risk > 0)) throw NumericalError("composite_quality: zero variance along the weight vector");
  const double rho = w.dot(latent.lambda_np()) / (std::sqrt(var_n) * std::sqrt(risk));
  return std::clamp(rho, -1.0, 1.0);
}

void QPProblem::validate() const {
  const auto d = r.size();
  if (d < 1 || sigma.rows() != d || sigma.cols() != d) throw ValidationError("QP dimension mismatch");
  if (!sigma.allFinite() || !r.allFinite()) throw ValidationError("QP data must be finite");
  if (!is_symmetric(sigma) || !is_psd(sigma)) throw ValidationError("QP sigma must be symmetric PSD");
  if (!(r.maxCoeff() > 0)) throw NumericalError("no positively-correlated proxy");
}

namespace {

Matrix regularize(const Matrix& sigma) {
  Matrix s = symmetrize(sigma);
  const double ridge = 1e-12 * s.trace() / static_cast<double>(s.rows());
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success || min_eigenvalue(s) <= 1e-14 * std::abs(s.trace())) {
    if (!(ridge > 0)) throw NumericalError("QP sigma is zero");
    s.diagonal().array() += ridge;
  }
  return s;
}

struct SupportSolution {
  bool feasible = false;
  Vector x;
  double objective = 0;
};

// Minimizer of x^T S x over r_S^T x_S = 1 restricted to the support, if nonnegative.
SupportSolution solve_on_support(const Matrix& sigma, const Vector& r, const std::vector<Eigen::Index>& support) {
  const auto k = static_cast<Eigen::Index>(support.size());
  Matrix s(k, k);
  Vector rs(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    rs(a) = r(support[a]);
    for (Eigen::Index b = 0; b < k; ++b) s(a, b) = sigma(support[a], support[b]);
  }
  Eigen::LDLT<Matrix> ldlt(s);
  const Vector y = ldlt.solve(rs);
  const double q = rs.dot(y);
  SupportSolution out;
  if (!(q > 0) || !y.allFinite()) return out;
  const Vector xs = y / q;
  if (xs.minCoeff() < -1e-12) return out;
  out.feasible = true;
  out.x = Vector::Zero(r.size());
  for (Eigen::Index a = 0; a < k; ++a) out.x(support[a]) = std::max(xs(a), 0.0);
  // Renormalize after clamping so r^T x = 1 holds to rounding.
  out.x /= r.dot(out.x);
  out.objective = out.x.dot(sigma * out.x);
  return out;
}

double multiplier(const Matrix& sigma, const Vector& x) {
  // On the support, 2 sigma x = nu r; the objective equals nu / 2 since r^T x = 1.
  return 2.0 * x.dot(sigma * x);
}

Vector solve_enumeration(const Matrix& sigma, const Vector& r) {
  const auto d = r.size();
  if (d > 20) throw ValidationError("support enumeration is limited to d <= 20");
  std::optional<SupportSolution> best;
  for (std::uint32_t mask = 1; mask < (1u << d); ++mask) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < d; ++i)
      if (mask & (1u << i)) support.push_back(i);
    auto sol = solve_on_support(sigma, r, support);
    if (!sol.feasible) continue;
    if (!best) {
      best = std::move(sol);
      continue;
    }
    const double tol = 1e-12 * std::max(std::abs(best->objective), 1e-300);
    if (sol.objective < best->objective - tol) {
      best = std::move(sol);
    } else if (std::abs(sol.objective - best->objective) <= tol && sol.x.norm() < best->x.norm()) {
      best = std::move(sol);  // tie: minimum-norm maximizer
    }
  }
  if (!best) throw NumericalError("no positively-correlated proxy");
  return best->x;
}

Vector solve_active_set(const Matrix& sigma, const Vector& r) {
  const auto d = r.size();
  // Start from the best single coordinate with positive return.
  Eigen::Index start = -1;
  double best_ratio = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (r(i) <= 0) continue;
    const double ratio = r(i) / std::sqrt(sigma(i, i));
    if (ratio > best_ratio) {
      best_ratio = ratio;
      start = i;
    }
  }
  if (start < 0) throw NumericalError("no positively-correlated proxy");
  Vector x = Vector::Zero(d);
  x(start) = 1.0 / r(start);
  std::vector<bool> free(static_cast<std::size_t>(d), false);
  free[static_cast<std::size_t>(start)] = true;

  const int max_iter = 50 * static_cast<int>(d) + 100;
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < d; ++i)
      if (free[static_cast<std::size_t>(i)]) support.push_back(i);
    const auto k = static_cast<Eigen::Index>(support.size());
    Matrix s(k, k);
    Vector rs(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      rs(a) = r(support[a]);
      for (Eigen::Index b = 0; b < k; ++b) s(a, b) = sigma(support[a], support[b]);
    }
    const Vector y = Eigen::LDLT<Matrix>(s).solve(rs);
    Vector target = Vector::Zero(d);
    for (Eigen::Index a = 0; a < k; ++a) target(support[a]) = y(a) / rs.dot(y);
    const Vector step = target - x;
    if (step.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
      // Stationary on the working set; release the most negative multiplier.
      const double nu = multiplier(sigma, x);
      const Vector kkt = 2.0 * sigma * x - nu * r;
      Eigen::Index release = -1;
      double most_negative = -1e-12 * std::max(1.0, nu * r.cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < d; ++i) {
        if (!free[static_cast<std::size_t>(i)] && kkt(i) < most_negative) {
          most_negative = kkt(i);
          release = i;
        }
      }
      if (release < 0) return x;
      free[static_cast<std::size_t>(release)] = true;
      continue;
    }
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i : support) {
      if (step(i) < 0) {
        const double a = -x(i) / step(i);
        if (a < alpha) {
          alpha = a;
          blocking = i;
        }
      }
    }
    x += alpha * step;
    if (blocking >= 0) {
      x(blocking) = 0.0;
      free[static_cast<std::size_t>(blocking)] = false;
    }
    x = x.cwiseMax(0.0);
    x /= r.dot(x);
  }
  throw NumericalError("active-set QP did not converge");
}

}  // namespace

QPSolution solve_qp(const QPProblem& problem, QPAlgorithm algorithm) {
  problem.validate();
  const Matrix sigma = regularize(problem.sigma);
  const auto d = problem.r.size();
  if (algorithm == QPAlgorithm::Auto) algorithm = d <= 3 ? QPAlgorithm::Enumeration : QPAlgorithm::ActiveSet;
  const Vector x = algorithm == QPAlgorithm::Enumeration ? solve_enumeration(sigma, problem.r)
                                                         : solve_active_set(sigma, problem.r);
  QPSolution out;
  out.x = x;
  out.objective = x.dot(problem.sigma * x);
  out.nu = multiplier(sigma, x);
  return out;
}

ProxyWeights optimize_weights(const LatentParams& latent, const Matrix& xi_pp, QPAlgorithm algorithm) {
  const auto d = static_cast<Eigen::Index>(latent.dim()) - 1;
  if (d < 1) throw ValidationError("optimize_weights needs at least one proxy");
  if (xi_pp.rows() != d || xi_pp.cols() != d) throw ValidationError("optimize_weights: xi_pp dimension mismatch");
  QPProblem problem{symmetrize(latent.lambda_pp() + xi_pp), latent.lambda_np()};
  const QPSolution sol = solve_qp(problem, algorithm);
  ProxyWeights out;
  out.w = sol.x.cwiseMax(0.0);
  out.w /= out.w.sum();
  out.rho = composite_quality(out.w, latent, xi_pp);
  return out;
}

double alignment_probability(double rho) {
  if (!(std::abs(rho) <= 1.0)) throw ValidationError("alignment_probability: |rho| must be <= 1");
  return 0.25 + std::asin(rho) / (2.0 * std::numbers::pi);
}

}  // namespace proxyopt
