#pragma once

#include "proxyopt/corpus.hpp"
#include "proxyopt/random.hpp"

#include <cstdint>
#include <variant>

namespace proxyopt {

/// Per-record explicit within-experiment covariances.
struct ExplicitNoise {
  std::vector<Matrix> xi;
};

/// Xi_i = xi_ref / n_i.
struct ScaledNoise {
  Matrix xi_ref;
  std::vector<std::int64_t> sizes;
};

/// Two-level generative model: Delta_i ~ MVN(mu, lambda), Delta_hat_i ~ MVN(Delta_i, Xi_i).
struct GenSpec {
  Vector mu;
  Matrix lambda;
  std::variant<ExplicitNoise, ScaledNoise> noise;
  std::size_t num_records = 0;
  std::uint64_t seed = 0;
  /// Optional names; defaults to "north_star", "proxy_1", ...
  std::optional<MetricSchema> schema;

  void validate() const;
  /// Covariance of record i's measurement noise.
  Matrix xi_for(std::size_t i) const;
  /// Treatment-unit count of record i (1 for explicit noise without sizes).
  std::int64_t n_for(std::size_t i) const;
};

struct GeneratedCorpus {
  Corpus corpus;
  /// Latent Delta_i, for test oracles only; never part of the corpus.
  std::vector<Vector> latent_truth;
};

/// One draw from MVN(mean, cov). Rank-deficient covariances are allowed.
Vector sample_mvn(const Vector& mean, const Matrix& cov, Rng& rng);

/// Same as sample_mvn with a precomputed factor F (F F^T = cov).
Vector sample_mvn_factored(const Vector& mean, const Matrix& factor, Rng& rng);

GeneratedCorpus generate(const GenSpec& spec);

/// Two independent half-sample estimates per latent draw, as produced by
/// randomly splitting the units of each experiment in two halves.
struct SplitSample {
  std::vector<std::pair<Vector, Vector>> pairs;
  /// One record per experiment carrying the pooled estimate (mean of halves)
  /// with xi_hat = split covariance / 2.
  Corpus pooled;
  std::vector<Vector> latent_truth;
};

/// Draws Delta_i ~ MVN(mu, lambda) and two halves Delta_i + MVN(0, xi_split).
SplitSample generate_split(const Vector& mu, const Matrix& lambda, const Matrix& xi_split,
                           std::size_t num_records, std::uint64_t seed);

MetricSchema default_schema(std::size_t num_proxies);

}  // namespace proxyopt
