#include "proxyopt/denoise.hpp"

#include "proxyopt/correlation_transform.hpp"
#include "proxyopt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace proxyopt {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

std::span<const double> segment(const Vector& v, std::size_t offset, std::size_t count) {
  return {v.data() + offset, count};
}

}  // namespace

void LatentParams::validate() const {
  const auto p = mu.size();
  if (lambda.rows() != p || lambda.cols() != p) throw ValidationError("latent lambda dimension mismatch");
  if (!mu.allFinite() || !lambda.allFinite()) throw ValidationError("latent parameters must be finite");
  if (!is_symmetric(lambda) || !is_psd(lambda)) throw ValidationError("latent lambda must be symmetric PSD");
}

void PriorSpec::validate(std::size_t dim) const {
  const auto p = static_cast<Eigen::Index>(dim);
  if (meanscale.size() != p || devscale.size() != p) throw ValidationError("prior scale dimension mismatch");
  if ((meanscale.array() <= 0).any() || (devscale.array() <= 0).any() || !meanscale.allFinite() ||
      !devscale.allFinite())
    throw ValidationError("prior scales must be finite and strictly positive");
  if (!(lkj_concentration > 0)) throw ValidationError("LKJ concentration must be positive");
  if (!(halfcauchy_multiplier > 0) || !(mean_multiplier > 0))
    throw ValidationError("prior multipliers must be positive");
}

PriorSpec PriorSpec::from_corpus(const Corpus& corpus) {
  if (corpus.empty()) throw ValidationError("cannot derive prior scales from an empty corpus");
  const auto p = static_cast<Eigen::Index>(corpus.dim());
  const Vector mean = corpus.sample_mean();
  const Matrix cov = corpus.sample_covariance();
  const Matrix xi = corpus.mean_xi();
  PriorSpec prior;
  prior.meanscale.resize(p);
  prior.devscale.resize(p);
  for (Eigen::Index a = 0; a < p; ++a) {
    double dev = std::sqrt(std::max(cov(a, a), 0.0));
    if (!(dev > 0)) dev = std::sqrt(std::max(xi(a, a), 0.0));
    if (!(dev > 0)) dev = 1.0;
    prior.devscale(a) = dev;
    prior.meanscale(a) = std::max(std::abs(mean(a)), dev);
  }
  return prior;
}

void FitConfig::validate() const {
  if (map_max_iters < 1 || mcmc_chains < 1 || mcmc_warmup < 1 || mcmc_samples < 1)
    throw ValidationError("fit iteration counts must be positive");
  if (!(map_grad_tol > 0)) throw ValidationError("map_grad_tol must be positive");
  if (!(rhat_threshold >= 1.0)) throw ValidationError("rhat_threshold must be >= 1");
}

// ---------------------------------------------------------------------------
// Coordinates

Vector to_unconstrained(const LatentParams& params) {
  const std::size_t p = params.dim();
  const Coordinates c{p};
  Vector theta(static_cast<Eigen::Index>(c.size()));
  const Vector sd = params.lambda.diagonal().cwiseSqrt();
  if ((sd.array() <= 0).any()) throw ValidationError("latent lambda needs a positive diagonal");
  const Matrix corr = sd.cwiseInverse().asDiagonal() * params.lambda * sd.cwiseInverse().asDiagonal();
  Eigen::LLT<Matrix> llt(symmetrize(corr));
  if (llt.info() != Eigen::Success) throw ValidationError("latent lambda must be positive definite");
  const auto pi = static_cast<Eigen::Index>(p);
  theta.segment(0, pi) = params.mu;
  theta.segment(pi, pi) = sd.array().log().matrix();
  Matrix l = llt.matrixL();
  // Renormalize rows so the factor is exactly a correlation factor.
  for (Eigen::Index i = 0; i < pi; ++i) l.row(i) /= l.row(i).norm();
  theta.tail(static_cast<Eigen::Index>(corr::num_params(p))) = corr::to_unconstrained(l);
  return theta;
}

LatentParams from_unconstrained(const Vector& theta, std::size_t dim) {
  const Coordinates c{dim};
  if (static_cast<std::size_t>(theta.size()) != c.size())
    throw ValidationError("unconstrained coordinate vector has the wrong length");
  const auto p = static_cast<Eigen::Index>(dim);
  const auto factor = corr::from_unconstrained(segment(theta, c.corr_offset(), corr::num_params(dim)), dim);
  const Vector sd = theta.segment(p, p).array().exp().matrix();
  Matrix corr = factor.cholesky * factor.cholesky.transpose();
  corr.diagonal().setOnes();
  LatentParams out{theta.segment(0, p), symmetrize(sd.asDiagonal() * corr * sd.asDiagonal())};
  return out;
}

// ---------------------------------------------------------------------------
// Marginal likelihood

MarginalLikelihood::MarginalLikelihood(const Corpus& corpus) : dim_(corpus.dim()) {
  // Grouping by the exact xi_hat bytes; std::map order makes the group
  // sequence independent of record order.
  std::map<std::vector<double>, std::vector<std::size_t>> by_xi;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_xi[pack_lower(corpus[i].xi_hat)].push_back(i);
  const auto p = static_cast<Eigen::Index>(dim_);
  for (auto& [key, members] : by_xi) {
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return corpus[a].id < corpus[b].id; });
    Group g;
    g.xi = corpus[members.front()].xi_hat;
    g.count = static_cast<double>(members.size());
    g.first_id = corpus[members.front()].id;
    g.mean = Vector::Zero(p);
    for (auto i : members) g.mean += corpus[i].delta_hat;
    g.mean /= g.count;
    g.scatter = Matrix::Zero(p, p);
    for (auto i : members) {
      const Vector c = corpus[i].delta_hat - g.mean;
      g.scatter += c * c.transpose();
    }
    groups_.push_back(std::move(g));
  }
}

double MarginalLikelihood::evaluate(const Vector& mu, const Matrix& lambda, Vector* grad_mu,
                                    Matrix* grad_lambda, bool throw_on_singular) const {
  const auto p = static_cast<Eigen::Index>(dim_);
  if (mu.size() != p || lambda.rows() != p || lambda.cols() != p)
    throw ValidationError("latent parameter dimension does not match corpus");
  if (grad_mu) grad_mu->setZero(p);
  if (grad_lambda) grad_lambda->setZero(p, p);
  const Matrix identity = Matrix::Identity(p, p);
  double total = 0.0;
  for (const auto& g : groups_) {
    Matrix sigma = lambda + g.xi;
    Eigen::LLT<Matrix> llt(sigma);
    auto ok = [&] {
      return llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0 &&
             llt.matrixLLT().allFinite();
    };
    if (!ok()) {
      sigma += (1e-12 * sigma.trace() / static_cast<double>(p)) * identity;
      llt.compute(sigma);
      if (!ok()) {
        if (throw_on_singular)
          throw NumericalError("singular marginal covariance lambda + xi for record '" + g.first_id + "'");
        return -std::numeric_limits<double>::infinity();
      }
    }
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const Vector diff = g.mean - mu;
    const Matrix inv = llt.solve(identity);
    // Sum over the group of (y - mu)(y - mu)^T.
    const Matrix moment = g.scatter + g.count * diff * diff.transpose();
    total += -0.5 * (g.count * (static_cast<double>(p) * kLog2Pi + log_det) + (inv * moment).trace());
    if (grad_mu) *grad_mu += g.count * (inv * diff);
    if (grad_lambda) *grad_lambda += 0.5 * (inv * moment * inv - g.count * inv);
  }
  if (grad_lambda) *grad_lambda = symmetrize(*grad_lambda);
  return total;
}

double MarginalLikelihood::value(const LatentParams& params) const {
  return evaluate(params.mu, params.lambda, nullptr, nullptr, true);
}

double marginal_log_likelihood(const LatentParams& params, const Corpus& corpus) {
  return MarginalLikelihood(corpus).value(params);
}

// ---------------------------------------------------------------------------
// Posterior

LogPosterior::LogPosterior(const Corpus& corpus, PriorSpec prior)
    : coords_{corpus.dim()}, likelihood_(corpus), prior_(std::move(prior)) {
  prior_.validate(corpus.dim());
}

LogPosterior::Terms LogPosterior::terms(const Vector& theta) const {
  const std::size_t p = coords_.p;
  const auto pi = static_cast<Eigen::Index>(p);
  if (static_cast<std::size_t>(theta.size()) != coords_.size())
    throw ValidationError("unconstrained coordinate vector has the wrong length");
  Terms t;
  const auto factor = corr::from_unconstrained(segment(theta, coords_.corr_offset(), corr::num_params(p)), p);
  const LatentParams params = from_unconstrained(theta, p);
  t.likelihood = likelihood_.evaluate(params.mu, params.lambda, nullptr, nullptr, false);
  for (Eigen::Index a = 0; a < pi; ++a) {
    const double tau = prior_.mean_multiplier * prior_.meanscale(a);
    const double m = theta(a);
    t.mu_prior += -0.5 * (m / tau) * (m / tau) - std::log(tau) - 0.5 * kLog2Pi;
    const double u = theta(pi + a);
    const double scale = prior_.halfcauchy_multiplier * prior_.devscale(a);
    const double r = std::exp(u) / scale;
    t.scale_prior += std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(r * r);
    t.log_jacobian += u;
  }
  double log_det_c = 0.0;
  for (Eigen::Index i = 1; i < pi; ++i) log_det_c += 2.0 * std::log(factor.cholesky(i, i));
  t.corr_prior = prior_.lkj_concentration == 1.0 ? 0.0 : (prior_.lkj_concentration - 1.0) * log_det_c;
  t.log_jacobian += factor.log_jacobian + corr::log_jacobian_cholesky_to_corr(factor.cholesky);
  return t;
}

double LogPosterior::value(const Vector& theta) const {
  const double v = terms(theta).total();
  return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

double LogPosterior::value_and_gradient(const Vector& theta, Vector& grad) const {
  const std::size_t p = coords_.p;
  const auto pi = static_cast<Eigen::Index>(p);
  if (static_cast<std::size_t>(theta.size()) != coords_.size())
    throw ValidationError("unconstrained coordinate vector has the wrong length");
  grad.setZero(theta.size());
  const auto z = segment(theta, coords_.corr_offset(), corr::num_params(p));
  const auto factor = corr::from_unconstrained(z, p);
  const Matrix& l = factor.cholesky;
  Matrix c = l * l.transpose();
  c.diagonal().setOnes();
  const Vector sd = theta.segment(pi, pi).array().exp().matrix();
  const Matrix lambda = symmetrize(sd.asDiagonal() * c * sd.asDiagonal());
  const Vector mu = theta.segment(0, pi);

  Vector g_mu;
  Matrix g_lambda;
  const double like = likelihood_.evaluate(mu, lambda, &g_mu, &g_lambda, false);
  if (!std::isfinite(like)) return -std::numeric_limits<double>::infinity();

  double total = like;
  grad.segment(0, pi) = g_mu;
  // dl/dC = D G D; dl/du_a = 2 sum_b (D G D)_ab C_ab.
  const Matrix h = sd.asDiagonal() * g_lambda * sd.asDiagonal();
  for (Eigen::Index a = 0; a < pi; ++a) grad(pi + a) = 2.0 * (h.row(a).array() * c.row(a).array()).sum();

  for (Eigen::Index a = 0; a < pi; ++a) {
    const double tau = prior_.mean_multiplier * prior_.meanscale(a);
    const double m = theta(a);
    total += -0.5 * (m / tau) * (m / tau) - std::log(tau) - 0.5 * kLog2Pi;
    grad(a) += -m / (tau * tau);
    const double u = theta(pi + a);
    const double scale = prior_.halfcauchy_multiplier * prior_.devscale(a);
    const double r = std::exp(u) / scale;
    total += std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(r * r) + u;
    grad(pi + a) += 1.0 - 2.0 * r * r / (1.0 + r * r);
  }

  double log_det_c = 0.0;
  for (Eigen::Index i = 1; i < pi; ++i) log_det_c += 2.0 * std::log(l(i, i));
  const double lkj_weight = prior_.lkj_concentration - 1.0;
  total += (lkj_weight == 0.0 ? 0.0 : lkj_weight * log_det_c) + factor.log_jacobian +
           corr::log_jacobian_cholesky_to_corr(l);
  const Matrix grad_l = (2.0 * h * l).triangularView<Eigen::Lower>();
  grad.tail(static_cast<Eigen::Index>(z.size())) = corr::backprop(z, l, grad_l, lkj_weight);

  if (!std::isfinite(total) || !grad.allFinite()) return -std::numeric_limits<double>::infinity();
  return total;
}

double log_posterior(const Vector& theta, const PriorSpec& prior, const Corpus& corpus) {
  return LogPosterior(corpus, prior).value(theta);
}

// ---------------------------------------------------------------------------
// Initialization and MAP

LatentParams initial_params(const Corpus& corpus, const PriorSpec& prior) {
  const auto p = static_cast<Eigen::Index>(corpus.dim());
  LatentParams init{corpus.sample_mean(), Matrix::Zero(p, p)};
  Matrix raw = corpus.size() >= 2 ? Matrix(corpus.sample_covariance() - corpus.mean_xi())
                                  : Matrix(Matrix::Zero(p, p));
  raw = project_psd(raw);
  Vector sd(p);
  for (Eigen::Index a = 0; a < p; ++a)
    sd(a) = std::max(std::sqrt(std::max(raw(a, a), 0.0)), 0.05 * prior.devscale(a));
  Matrix corr = Matrix::Identity(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b)
      if (a != b) {
        const double denom = std::sqrt(std::max(raw(a, a), 0.0) * std::max(raw(b, b), 0.0));
        corr(a, b) = denom > 0 ? raw(a, b) / denom : 0.0;
      }
  // Shrink toward identity to stay strictly inside the correlation set.
  corr = 0.9 * corr + 0.1 * Matrix::Identity(p, p);
  init.lambda = symmetrize(sd.asDiagonal() * corr * sd.asDiagonal());
  return init;
}

namespace {

Matrix fd_hessian(const LogPosterior& post, const Vector& theta) {
  const auto n = theta.size();
  Matrix h(n, n);
  Vector gp, gm;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = 1e-5 * std::max(1.0, std::abs(theta(j)));
    Vector tp = theta, tm = theta;
    tp(j) += step;
    tm(j) -= step;
    const double fp = post.value_and_gradient(tp, gp);
    const double fm = post.value_and_gradient(tm, gm);
    if (!std::isfinite(fp) || !std::isfinite(fm)) return Matrix();
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return symmetrize(h);
}

}  // namespace

MapResult fit_map(const Corpus& corpus, const PriorSpec& prior, const FitConfig& config) {
  config.validate();
  if (corpus.empty()) throw ValidationError("cannot fit an empty corpus");
  MapResult result;
  const std::size_t p = corpus.dim();
  if (corpus.size() < p + 1) {
    std::ostringstream msg;
    msg << "corpus has K=" << corpus.size() << " records for " << p
        << " metrics; the fit is prior-dominated (K >= " << p + 1 << " recommended)";
    result.warnings.push_back(msg.str());
  }
  const LogPosterior post(corpus, prior);
  Vector theta = to_unconstrained(initial_params(corpus, prior));
  Vector grad;
  double f = post.value_and_gradient(theta, grad);
  if (!std::isfinite(f)) throw NumericalError("log posterior is not finite at the initial point");

  const auto gnorm = [](const Vector& g) { return g.cwiseAbs().maxCoeff(); };
  int iter = 0;
  for (; iter < config.map_max_iters; ++iter) {
    if (gnorm(grad) <= config.map_grad_tol) break;
    // Ascent direction from the eigenvalue-modified negative Hessian.
    Vector dir = grad;
    const Matrix h = fd_hessian(post, theta);
    if (h.size() > 0 && h.allFinite()) {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(-h);
      const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
      const Vector inv = eig.eigenvalues().cwiseAbs().cwiseMax(1e-10 * top + 1e-300).cwiseInverse();
      dir = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * grad;
    }
    const double max_step = 2.0;
    if (dir.cwiseAbs().maxCoeff() > max_step) dir *= max_step / dir.cwiseAbs().maxCoeff();

    double slope = grad.dot(dir);
    if (!(slope > 0)) {
      dir = grad;
      slope = grad.squaredNorm();
    }
    bool accepted = false;
    Vector trial_grad;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      const Vector trial = theta + t * dir;
      const double ft = post.value_and_gradient(trial, trial_grad);
      if (!std::isfinite(ft)) continue;
      const bool armijo = ft >= f + 1e-4 * t * slope;
      // Near the optimum f stops resolving; accept steps that shrink the gradient.
      const bool flat = ft >= f - 1e-12 * std::max(1.0, std::abs(f)) && gnorm(trial_grad) < gnorm(grad);
      if (armijo || flat) {
        theta = trial;
        f = ft;
        grad = trial_grad;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  const double final_norm = gnorm(grad);
  if (final_norm > config.map_grad_tol) {
    std::ostringstream msg;
    msg << "MAP fit did not converge after " << iter << " iterations (gradient max-norm " << final_norm
        << ", tolerance " << config.map_grad_tol << ")";
    throw MapConvergenceError(msg.str(), theta, final_norm);
  }
  result.theta = theta;
  result.params = from_unconstrained(theta, p);
  result.iterations = iter;
  result.grad_norm = final_norm;
  result.log_posterior = f;
  return result;
}

// ---------------------------------------------------------------------------
// Moment estimator

MomentEstimate moment_estimator(std::span<const std::pair<Vector, Vector>> paired) {
  if (paired.size() < 2) throw ValidationError("moment estimator needs at least two pairs");
  const auto p = paired.front().first.size();
  for (const auto& [a, b] : paired)
    if (a.size() != p || b.size() != p) throw ValidationError("moment estimator: split length mismatch");
  Vector m1 = Vector::Zero(p), m2 = Vector::Zero(p);
  for (const auto& [a, b] : paired) {
    m1 += a;
    m2 += b;
  }
  const double k = static_cast<double>(paired.size());
  m1 /= k;
  m2 /= k;
  Matrix cross = Matrix::Zero(p, p);
  for (const auto& [a, b] : paired) cross += (a - m1) * (b - m2).transpose();
  cross /= (k - 1.0);
  return {0.5 * (m1 + m2), symmetrize(cross)};
}

}  // namespace proxyopt
