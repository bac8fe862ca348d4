#include "doctest.h"
#include "test_helpers.hpp"

#include "proxyopt/denoise.hpp"
#include "proxyopt/synthgen.hpp"

#include <cmath>

using namespace proxyopt;
using namespace proxyopt::testing;

namespace {

// Split-chain potential scale reduction written out directly from its definition.
double reference_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    halves.emplace_back(c.begin(), c.begin() + static_cast<long>(h));
    halves.emplace_back(c.end() - static_cast<long>(h), c.end());
  }
  const double n = static_cast<double>(halves.front().size());
  const double m = static_cast<double>(halves.size());
  std::vector<double> means, vars;
  for (const auto& c : halves) {
    double s = 0;
    for (double x : c) s += x;
    const double mean = s / n;
    double v = 0;
    for (double x : c) v += (x - mean) * (x - mean);
    means.push_back(mean);
    vars.push_back(v / (n - 1));
  }
  double grand = 0;
  for (double x : means) grand += x;
  grand /= m;
  double b = 0, w = 0;
  for (std::size_t j = 0; j < means.size(); ++j) {
    b += (means[j] - grand) * (means[j] - grand);
    w += vars[j];
  }
  b *= n / (m - 1);
  w /= m;
  return std::sqrt(((n - 1) / n * w + b / n) / w);
}

std::vector<std::vector<double>> iid_chains(int m, int n, Rng& rng, double shift = 0) {
  std::vector<std::vector<double>> out(m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) out[j].push_back(standard_normal(rng) + shift * j);
  return out;
}

std::vector<std::vector<double>> ar1_chains(int m, int n, double phi, Rng& rng) {
  std::vector<std::vector<double>> out(m);
  for (int j = 0; j < m; ++j) {
    double x = standard_normal(rng) / std::sqrt(1 - phi * phi);
    for (int i = 0; i < n; ++i) {
      x = phi * x + standard_normal(rng);
      out[j].push_back(x);
    }
  }
  return out;
}

Corpus reference_corpus(std::uint64_t seed) {
  GenSpec spec;
  spec.mu = Vector::Zero(2);
  spec.lambda = 0.01 * mat2(1, 0.2, 0.2, 1);
  spec.noise = ExplicitNoise{std::vector<Matrix>(1500, 0.02 * mat2(1, 0.7, 0.7, 1))};
  spec.num_records = 1500;
  spec.seed = seed;
  return generate(spec).corpus;
}

FitConfig short_mcmc(std::uint64_t seed) {
  FitConfig config;
  config.method = FitMethod::Mcmc;
  config.mcmc_chains = 4;
  config.mcmc_warmup = 1000;
  config.mcmc_samples = 2000;
  config.seed = seed;
  return config;
}

}  // namespace

TEST_CASE("split_rhat matches the direct formula") {
  Rng rng(1);
  const auto chains = iid_chains(4, 101, rng, 0.3);
  CHECK(split_rhat(chains) == doctest::Approx(reference_rhat(chains)).epsilon(1e-12));
}

TEST_CASE("split_rhat: well-mixed chains near 1, separated chains large") {
  Rng rng(2);
  CHECK(split_rhat(iid_chains(4, 5000, rng)) < 1.005);
  CHECK(split_rhat(iid_chains(4, 5000, rng, 2.0)) > 1.5);
}

TEST_CASE("split_rhat detects a drifting chain") {
  std::vector<std::vector<double>> chains(2);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    chains[0].push_back(standard_normal(rng) + 0.01 * i);
    chains[1].push_back(standard_normal(rng) + 0.01 * i);
  }
  CHECK(split_rhat(chains) > 1.1);
}

TEST_CASE("effective sample size of iid draws is close to the draw count") {
  Rng rng(4);
  const double ess = effective_sample_size(iid_chains(4, 5000, rng));
  CHECK(ess > 0.85 * 20000);
  CHECK(ess < 1.15 * 20000);
}

TEST_CASE("effective sample size of AR(1) draws follows (1 - phi) / (1 + phi)") {
  Rng rng(5);
  const double ess = effective_sample_size(ar1_chains(4, 20000, 0.5, rng));
  const double expected = 80000.0 / 3.0;
  CHECK(ess > 0.85 * expected);
  CHECK(ess < 1.15 * expected);
}

TEST_CASE("fit_mcmc on the two-metric reference corpus: recovery, r-hat, agreement with MAP") {
  const auto c = reference_corpus(20240601);
  const auto prior = PriorSpec::from_corpus(c);
  const auto mc = fit_mcmc(c, prior, short_mcmc(11));
  const Matrix truth = 0.01 * mat2(1, 0.2, 0.2, 1);
  CHECK((mc.posterior_mean.lambda - truth).cwiseAbs().maxCoeff() <= 0.004);
  CHECK(mc.converged);
  CHECK(mc.chains == 4);
  CHECK(mc.draws_per_chain == 2000);
  for (const auto& d : mc.diagnostics) {
    CHECK(d.rhat <= 1.01);
    CHECK(d.ess > 100);
  }
  CHECK(mc.diagnostics.size() == 5);  // 2 means + 3 lambda entries
  const auto map = fit_map(c, prior, FitConfig{});
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 2; ++j)
      CHECK(std::abs(mc.posterior_mean.lambda(i, j) - map.params.lambda(i, j)) <= 2 * mc.posterior_sd.lambda(i, j));
}

TEST_CASE("fit_mcmc is deterministic for a fixed seed") {
  const auto c = reference_corpus(3);
  const auto prior = PriorSpec::from_corpus(c);
  FitConfig config = short_mcmc(5);
  config.mcmc_warmup = 200;
  config.mcmc_samples = 200;
  const auto a = fit_mcmc(c, prior, config);
  const auto b = fit_mcmc(c, prior, config);
  CHECK(a.posterior_mean.lambda == b.posterior_mean.lambda);
  CHECK(a.posterior_mean.mu == b.posterior_mean.mu);
}

TEST_CASE("fit_mcmc flags non-convergence instead of discarding") {
  const auto c = reference_corpus(4);
  FitConfig config = short_mcmc(6);
  config.mcmc_warmup = 5;
  config.mcmc_samples = 8;
  const auto r = fit_mcmc(c, PriorSpec::from_corpus(c), config);
  if (!r.converged) CHECK(!r.warnings.empty());
  CHECK(is_psd(r.posterior_mean.lambda));
}

TEST_CASE("fit_mcmc shrinks a zero-spread corpus towards lambda = 0") {
  std::vector<ExperimentRecord> records;
  for (int i = 0; i < 500; ++i)
    records.push_back(make_record("r" + std::to_string(i), 1, vec({0.1, -0.2}), Matrix::Identity(2, 2)));
  const Corpus c(default_schema(1), records);
  const auto r = fit_mcmc(c, PriorSpec::from_corpus(c), short_mcmc(7));
  for (Eigen::Index a = 0; a < 2; ++a) CHECK(r.posterior_mean.lambda(a, a) < 0.1);
}
