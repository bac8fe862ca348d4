#pragma once

#include "proxyopt/corpus.hpp"
#include "proxyopt/errors.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace proxyopt {

/// Population model of the true treatment effects: Delta ~ MVN(mu, lambda).
struct LatentParams {
  Vector mu;
  Matrix lambda;

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
  double lambda_nn() const { return lambda(0, 0); }
  /// Cov(Delta^N, Delta^P), length d.
  Vector lambda_np() const { return lambda.row(0).tail(lambda.cols() - 1).transpose(); }
  /// Cov(Delta^P, Delta^P), d x d.
  Matrix lambda_pp() const {
    const auto d = lambda.rows() - 1;
    return lambda.bottomRightCorner(d, d);
  }
  void validate() const;
};

/// Weak priors on the hierarchical model:
///   mu_a ~ N(0, (mean_multiplier * meanscale_a)^2)
///   sigma_a = sqrt(lambda_aa) ~ Half-Cauchy(scale = halfcauchy_multiplier * devscale_a)
///   C ~ LKJ(lkj_concentration)
struct PriorSpec {
  Vector meanscale;
  Vector devscale;
  double lkj_concentration = 1.0;
  double halfcauchy_multiplier = 1.5;
  double mean_multiplier = 1000.0;

  /// Scales matched to the raw corpus moments: devscale = raw standard
  /// deviation of delta_hat, meanscale = max(|raw mean|, devscale). Zero
  /// spreads fall back to sqrt(mean xi_hat diagonal), then to 1.
  static PriorSpec from_corpus(const Corpus& corpus);
  void validate(std::size_t dim) const;
};

enum class FitMethod { Map, Mcmc };

struct FitConfig {
  FitMethod method = FitMethod::Map;
  int map_max_iters = 2000;
  double map_grad_tol = 1e-7;
  int mcmc_chains = 4;
  int mcmc_warmup = 10000;
  int mcmc_samples = 50000;
  double rhat_threshold = 1.01;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Layout of the unconstrained coordinate vector
/// [mu (p) | log latent sd (p) | correlation coordinates (p(p-1)/2)].
struct Coordinates {
  std::size_t p;

  std::size_t size() const { return 2 * p + p * (p - 1) / 2; }
  std::size_t mu_offset() const { return 0; }
  std::size_t log_sd_offset() const { return p; }
  std::size_t corr_offset() const { return 2 * p; }
};

/// Maps LatentParams to the unconstrained coordinates. Requires lambda
/// positive definite.
Vector to_unconstrained(const LatentParams& params);
LatentParams from_unconstrained(const Vector& theta, std::size_t dim);

/// Marginal likelihood sum_i log MVN(delta_hat_i; mu, lambda + xi_hat_i).
/// Records with bitwise-identical xi_hat share sufficient statistics.
class MarginalLikelihood {
 public:
  explicit MarginalLikelihood(const Corpus& corpus);

  /// Throws NumericalError naming a record when lambda + xi stays singular
  /// after one jitter of 1e-12 * trace / p.
  double value(const LatentParams& params) const;

  /// Value plus gradients with respect to mu and (entrywise, symmetric) lambda.
  /// Returns -inf instead of throwing when throw_on_singular is false.
  double evaluate(const Vector& mu, const Matrix& lambda, Vector* grad_mu, Matrix* grad_lambda,
                  bool throw_on_singular) const;

  std::size_t num_groups() const { return groups_.size(); }
  std::size_t dim() const { return dim_; }

 private:
  struct Group {
    Matrix xi;
    double count = 0;
    Vector mean;
    Matrix scatter;  // sum (y - mean)(y - mean)^T
    std::string first_id;
  };
  std::size_t dim_;
  std::vector<Group> groups_;
};

double marginal_log_likelihood(const LatentParams& params, const Corpus& corpus);

/// The unnormalized log posterior in unconstrained coordinates.
class LogPosterior {
 public:
  LogPosterior(const Corpus& corpus, PriorSpec prior);

  struct Terms {
    double likelihood = 0;
    double mu_prior = 0;
    double scale_prior = 0;   ///< Half-Cauchy on latent sds
    double corr_prior = 0;    ///< (eta - 1) log det C
    double log_jacobian = 0;  ///< log sd transform + correlation transform
    double total() const { return likelihood + mu_prior + scale_prior + corr_prior + log_jacobian; }
  };

  Terms terms(const Vector& theta) const;
  double value(const Vector& theta) const;
  /// -inf when the point is numerically invalid; grad is then unspecified.
  double value_and_gradient(const Vector& theta, Vector& grad) const;

  std::size_t dim() const { return coords_.p; }
  std::size_t num_params() const { return coords_.size(); }
  const PriorSpec& prior() const { return prior_; }

 private:
  Coordinates coords_;
  MarginalLikelihood likelihood_;
  PriorSpec prior_;
};

double log_posterior(const Vector& theta, const PriorSpec& prior, const Corpus& corpus);

/// Warm start from raw moments: mu = corpus mean, lambda = PSD projection of
/// (sample covariance - mean xi_hat), floored to stay positive definite.
LatentParams initial_params(const Corpus& corpus, const PriorSpec& prior);

struct MapResult {
  LatentParams params;
  Vector theta;
  int iterations = 0;
  double grad_norm = 0;
  double log_posterior = 0;
  std::vector<std::string> warnings;
};

class MapConvergenceError : public NumericalError {
 public:
  MapConvergenceError(const std::string& what, Vector last, double grad_norm)
      : NumericalError(what), last_theta(std::move(last)), last_grad_norm(grad_norm) {}
  Vector last_theta;
  double last_grad_norm;
};

/// Posterior mode in unconstrained coordinates (modified Newton with
/// backtracking); converges when the gradient max-norm <= map_grad_tol.
MapResult fit_map(const Corpus& corpus, const PriorSpec& prior, const FitConfig& config);

struct ParameterDiagnostic {
  std::string name;
  double mean = 0;
  double sd = 0;
  double rhat = 0;
  double ess = 0;
};

struct McmcResult {
  LatentParams posterior_mean;
  LatentParams posterior_sd;  ///< entrywise posterior standard deviations
  std::vector<ParameterDiagnostic> diagnostics;
  int chains = 0;
  int draws_per_chain = 0;
  double acceptance_rate = 0;
  int divergences = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Hamiltonian Monte Carlo with a dense adapted metric, independent chains.
/// r-hat above the threshold flags the result as non-converged.
McmcResult fit_mcmc(const Corpus& corpus, const PriorSpec& prior, const FitConfig& config);

/// Split-half potential scale reduction over chains (rows = draws).
double split_rhat(const std::vector<std::vector<double>>& chains);
/// Effective sample size with Geyer's initial monotone sequence.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

struct MomentEstimate {
  Vector mu;
  Matrix lambda;
};

/// Sample-splitting estimator: lambda = symmetrized cross-covariance of the
/// two half-sample estimates, mu = mean of the two split means.
MomentEstimate moment_estimator(std::span<const std::pair<Vector, Vector>> paired);

}  // namespace proxyopt
