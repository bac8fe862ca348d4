#include "doctest.h"
#include "test_helpers.hpp"

#include "proxyopt/denoise.hpp"
#include "proxyopt/synthgen.hpp"

#include <cmath>
#include <numbers>

using namespace proxyopt;
using namespace proxyopt::testing;

namespace {

Corpus single_record_corpus(const Vector& delta, const Matrix& xi) {
  return Corpus(default_schema(delta.size() - 1), {make_record("a", 100, delta, xi)});
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

Corpus random_corpus(std::size_t p, std::size_t k, Rng& rng) {
  std::vector<ExperimentRecord> records;
  const Matrix lambda = random_spd(p, rng, 0.2);
  const Matrix chol = lambda.llt().matrixL();
  for (std::size_t i = 0; i < k; ++i) {
    Matrix xi = random_spd(p, rng, 0.05) * 0.3;
    const Vector delta = sample_mvn(Vector::Zero(p), lambda + xi, rng);
    records.push_back(make_record("r" + std::to_string(i), 1000, delta, xi));
  }
  (void)chol;
  return Corpus(default_schema(p - 1), std::move(records));
}

Vector random_theta(std::size_t p, Rng& rng) {
  return random_vector(Coordinates{p}.size(), rng, 0.7);
}

// Independent density: direct inverse and log-determinant per record.
double direct_loglik(const Corpus& c, const Vector& mu, const Matrix& lambda) {
  double total = 0;
  for (const auto& r : c.records()) {
    const Matrix s = lambda + r.xi_hat;
    const Vector e = r.delta_hat - mu;
    const double quad = e.dot(s.inverse() * e);
    total += -0.5 * (static_cast<double>(mu.size()) * std::log(2 * std::numbers::pi) + std::log(s.determinant()) + quad);
  }
  return total;
}

// Map from (log sd, correlation coordinates) to (sd, strict-lower correlation entries).
Vector constrained_image(const Vector& theta, std::size_t p) {
  const auto params = from_unconstrained(theta, p);
  const Vector sd = params.lambda.diagonal().cwiseSqrt();
  Vector out(static_cast<Eigen::Index>(p + p * (p - 1) / 2));
  Eigen::Index k = 0;
  for (std::size_t a = 0; a < p; ++a) out(k++) = sd(a);
  for (std::size_t i = 1; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) out(k++) = params.lambda(i, j) / (sd(i) * sd(j));
  return out;
}

}  // namespace

TEST_CASE("marginal likelihood: single record d=1 at the origin equals -log(4 pi)") {
  const auto c = single_record_corpus(Vector::Zero(2), Matrix::Identity(2, 2));
  const LatentParams params{Vector::Zero(2), Matrix::Identity(2, 2)};
  CHECK(marginal_log_likelihood(params, c) == doctest::Approx(-std::log(4 * std::numbers::pi)).epsilon(1e-14));
  CHECK(marginal_log_likelihood(params, c) == doctest::Approx(-2.53102).epsilon(1e-5));
}

TEST_CASE("marginal likelihood is additive over identical records") {
  const Vector d = vec({0.3, -0.1});
  const Matrix xi = mat2(0.5, 0.1, 0.1, 0.4);
  const auto one = single_record_corpus(d, xi);
  const Corpus two(default_schema(1), {make_record("a", 1, d, xi), make_record("b", 1, d, xi)});
  const LatentParams params{vec({0.1, 0.0}), mat2(1, 0.2, 0.2, 2)};
  CHECK(marginal_log_likelihood(params, two) == doctest::Approx(2 * marginal_log_likelihood(params, one)).epsilon(1e-14));
}

TEST_CASE("marginal likelihood matches a direct per-record evaluation") {
  Rng rng(3);
  for (std::size_t p : {2u, 3u, 4u, 5u}) {
    const auto c = random_corpus(p, 30, rng);
    const LatentParams params{random_vector(p, rng, 0.2), random_spd(p, rng)};
    CHECK(marginal_log_likelihood(params, c) == doctest::Approx(direct_loglik(c, params.mu, params.lambda)).epsilon(1e-10));
  }
}

TEST_CASE("marginal likelihood with lambda = 0 collapses to iid Gaussian log-likelihood") {
  const Matrix xi = vec({0.25, 0.5}).asDiagonal();
  const Corpus c(default_schema(1), {make_record("a", 1, vec({1.0, 0.3}), xi), make_record("b", 1, vec({-0.5, 0.1}), xi)});
  const LatentParams params{vec({0.2, 0.0}), Matrix::Zero(2, 2)};
  double expected = 0;
  for (const auto& r : c.records())
    for (Eigen::Index a = 0; a < 2; ++a) {
      const double e = r.delta_hat(a) - params.mu(a);
      expected += -0.5 * std::log(2 * std::numbers::pi * xi(a, a)) - 0.5 * e * e / xi(a, a);
    }
  CHECK(marginal_log_likelihood(params, c) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("marginal likelihood: singular covariance names the record") {
  const Corpus c(default_schema(1), {make_record("bad_one", 1, vec({0.0, 0.0}), Matrix::Zero(2, 2))});
  const LatentParams params{Vector::Zero(2), Matrix::Zero(2, 2)};
  try {
    marginal_log_likelihood(params, c);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("bad_one") != std::string::npos);
  }
}

TEST_CASE("records sharing xi are grouped") {
  const Matrix xi = 0.1 * Matrix::Identity(2, 2);
  const Corpus c(default_schema(1), {make_record("a", 1, vec({0.1, 0.0}), xi), make_record("b", 1, vec({0.0, 0.2}), xi),
                                     make_record("c", 1, vec({0.0, 0.2}), 2 * xi)});
  CHECK(MarginalLikelihood(c).num_groups() == 2);
}

TEST_CASE("coordinates roundtrip") {
  Rng rng(9);
  for (std::size_t p : {1u, 2u, 3u, 5u}) {
    for (int rep = 0; rep < 10; ++rep) {
      const LatentParams params{random_vector(p, rng), random_spd(p, rng)};
      const auto back = from_unconstrained(to_unconstrained(params), p);
      CHECK((back.mu - params.mu).norm() < 1e-12);
      CHECK((back.lambda - params.lambda).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(is_symmetric(back.lambda));
    }
  }
}

TEST_CASE("log Jacobian matches a finite-difference Jacobian determinant") {
  Rng rng(12);
  for (std::size_t p : {2u, 3u, 4u}) {
    const auto c = random_corpus(p, 5, rng);
    LogPosterior post(c, PriorSpec::from_corpus(c));
    for (int rep = 0; rep < 5; ++rep) {
      const Vector theta = random_theta(p, rng);
      const auto m = static_cast<Eigen::Index>(p + p * (p - 1) / 2);
      Matrix jac(m, m);
      const double h = 1e-6;
      for (Eigen::Index j = 0; j < m; ++j) {
        Vector tp = theta, tm = theta;
        tp(static_cast<Eigen::Index>(p) + j) += h;
        tm(static_cast<Eigen::Index>(p) + j) -= h;
        jac.col(j) = (constrained_image(tp, p) - constrained_image(tm, p)) / (2 * h);
      }
      const double fd = std::log(std::abs(jac.determinant()));
      CHECK(post.terms(theta).log_jacobian == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("LKJ(1) contributes nothing and posterior minus likelihood ignores the correlation block") {
  Rng rng(4);
  const auto c = random_corpus(3, 10, rng);
  LogPosterior post(c, PriorSpec::from_corpus(c));
  Vector theta = random_theta(3, rng);
  const auto t1 = post.terms(theta);
  CHECK(t1.corr_prior == 0.0);
  theta.tail(3) = random_vector(3, rng);
  const auto t2 = post.terms(theta);
  CHECK(t2.corr_prior == 0.0);
  CHECK((t1.mu_prior + t1.scale_prior) == doctest::Approx(t2.mu_prior + t2.scale_prior).epsilon(1e-14));
}

TEST_CASE("LKJ(eta) term is (eta - 1) log det C") {
  Rng rng(5);
  const auto c = random_corpus(3, 10, rng);
  PriorSpec prior = PriorSpec::from_corpus(c);
  prior.lkj_concentration = 3.0;
  LogPosterior post(c, prior);
  const Vector theta = random_theta(3, rng);
  const auto params = from_unconstrained(theta, 3);
  const Vector sd = params.lambda.diagonal().cwiseSqrt();
  const Matrix corr = sd.cwiseInverse().asDiagonal() * params.lambda * sd.cwiseInverse().asDiagonal();
  CHECK(post.terms(theta).corr_prior == doctest::Approx(2.0 * std::log(corr.determinant())).epsilon(1e-10));
}

TEST_CASE("flat mean prior: mu gradient of the posterior equals the likelihood gradient") {
  Rng rng(6);
  const auto c = random_corpus(2, 20, rng);
  PriorSpec prior = PriorSpec::from_corpus(c);
  prior.meanscale = Vector::Constant(2, 1e12);
  LogPosterior post(c, prior);
  const Vector theta = random_theta(2, rng);
  Vector grad;
  post.value_and_gradient(theta, grad);
  const auto params = from_unconstrained(theta, 2);
  Vector gmu;
  Matrix glam;
  MarginalLikelihood(c).evaluate(params.mu, params.lambda, &gmu, &glam, true);
  CHECK((grad.head(2) - gmu).cwiseAbs().maxCoeff() < 1e-12 * (1 + gmu.cwiseAbs().maxCoeff()));
}

TEST_CASE("value, terms and log_posterior agree") {
  Rng rng(7);
  const auto c = random_corpus(2, 8, rng);
  const auto prior = PriorSpec::from_corpus(c);
  LogPosterior post(c, prior);
  const Vector theta = random_theta(2, rng);
  Vector grad;
  const double v = post.value_and_gradient(theta, grad);
  CHECK(post.value(theta) == doctest::Approx(v).epsilon(1e-13));
  CHECK(post.terms(theta).total() == doctest::Approx(v).epsilon(1e-13));
  CHECK(log_posterior(theta, prior, c) == doctest::Approx(v).epsilon(1e-13));
}

TEST_CASE("analytic gradient matches central differences (d = 1, 2, 3)") {
  Rng rng(8);
  for (std::size_t p : {2u, 3u, 4u}) {
    const auto c = random_corpus(p, 15, rng);
    PriorSpec prior = PriorSpec::from_corpus(c);
    prior.lkj_concentration = 2.0;
    LogPosterior post(c, prior);
    for (int rep = 0; rep < 20; ++rep) {
      const Vector theta = random_theta(p, rng);
      Vector grad;
      post.value_and_gradient(theta, grad);
      for (Eigen::Index j = 0; j < theta.size(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
        Vector tp = theta, tm = theta;
        tp(j) += h;
        tm(j) -= h;
        const double fd = (post.value(tp) - post.value(tm)) / (2 * h);
        CHECK(std::abs(fd - grad(j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("prior scales from corpus moments") {
  const Matrix xi = 0.04 * Matrix::Identity(2, 2);
  const Corpus c(default_schema(1), {make_record("a", 1, vec({1.0, 0.0}), xi), make_record("b", 1, vec({3.0, 0.0}), xi)});
  const auto prior = PriorSpec::from_corpus(c);
  CHECK(prior.devscale(0) == doctest::Approx(std::sqrt(2.0)));
  CHECK(prior.meanscale(0) == doctest::Approx(2.0));
  CHECK(prior.devscale(1) == doctest::Approx(0.2));
  CHECK(prior.meanscale(1) == doctest::Approx(0.2));
}

TEST_CASE("fit_map recovers the two-metric reference latent covariance") {
  const auto c = reference_corpus(20240601);
  const auto fit = fit_map(c, PriorSpec::from_corpus(c), FitConfig{});
  const Matrix truth = 0.01 * mat2(1, 0.2, 0.2, 1);
  CHECK((fit.params.lambda - truth).cwiseAbs().maxCoeff() <= 0.004);
  const double corr = fit.params.lambda(0, 1) / std::sqrt(fit.params.lambda(0, 0) * fit.params.lambda(1, 1));
  CHECK(std::abs(corr - 0.2) <= 0.1);
  CHECK(fit.grad_norm <= 1e-7);
  CHECK(is_symmetric(fit.params.lambda));
  CHECK(is_psd(fit.params.lambda));
  CHECK(fit.params.lambda == fit.params.lambda.transpose());
}

TEST_CASE("fit_map with zero noise returns the sample moments") {
  GenSpec spec;
  spec.mu = vec({0.5, -0.2});
  spec.lambda = mat2(1.0, 0.3, 0.3, 0.5);
  spec.noise = ExplicitNoise{std::vector<Matrix>(1500, Matrix::Zero(2, 2))};
  spec.num_records = 1500;
  spec.seed = 5;
  const auto c = generate(spec).corpus;
  const auto fit = fit_map(c, PriorSpec::from_corpus(c), FitConfig{});
  const Matrix mle = c.sample_covariance() * (1499.0 / 1500.0);
  CHECK((fit.params.mu - c.sample_mean()).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((fit.params.lambda - mle).cwiseAbs().maxCoeff() < 2e-3);
  CHECK((fit.params.lambda - c.sample_covariance()).cwiseAbs().maxCoeff() < 2e-3);
}

TEST_CASE("fit_map on K=1 warns and still returns") {
  const auto c = single_record_corpus(vec({0.1, 0.2}), 0.01 * Matrix::Identity(2, 2));
  const auto fit = fit_map(c, PriorSpec::from_corpus(c), FitConfig{});
  CHECK(!fit.warnings.empty());
  CHECK(is_psd(fit.params.lambda));
}

TEST_CASE("fit_map reports non-convergence with the last iterate") {
  const auto c = reference_corpus(1);
  FitConfig config;
  config.map_max_iters = 1;
  try {
    fit_map(c, PriorSpec::from_corpus(c), config);
    FAIL("expected MapConvergenceError");
  } catch (const MapConvergenceError& e) {
    CHECK(e.last_theta.size() == 5);
    CHECK(e.last_grad_norm > 1e-7);
  }
}

TEST_CASE("fitted lambda diagonal never exceeds the raw sample variance") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = reference_corpus(100 + seed);
    const auto fit = fit_map(c, PriorSpec::from_corpus(c), FitConfig{});
    const Matrix raw = c.sample_covariance();
    for (Eigen::Index a = 0; a < 2; ++a) CHECK(fit.params.lambda(a, a) <= raw(a, a) + 1e-9);
  }
}

TEST_CASE("moment estimator: identical noiseless splits give the sample covariance") {
  Rng rng(10);
  std::vector<std::pair<Vector, Vector>> pairs;
  std::vector<ExperimentRecord> records;
  for (int i = 0; i < 50; ++i) {
    const Vector d = random_vector(3, rng);
    pairs.emplace_back(d, d);
    records.push_back(make_record("r" + std::to_string(i), 1, d, Matrix::Zero(3, 3)));
  }
  const auto est = moment_estimator(pairs);
  const Corpus c(default_schema(2), records);
  CHECK((est.lambda - c.sample_covariance()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((est.mu - c.sample_mean()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("moment estimator at K=20000 recovers lambda") {
  const Matrix lambda = 0.01 * mat2(1, 0.2, 0.2, 1);
  const auto s = generate_split(Vector::Zero(2), lambda, 0.04 * Matrix::Identity(2, 2), 20000, 31);
  const auto est = moment_estimator(s.pairs);
  CHECK((est.lambda - lambda).cwiseAbs().maxCoeff() <= 0.0015);
  CHECK(est.lambda == est.lambda.transpose());
}

TEST_CASE("moment estimator: K=2 works, K<2 is rejected") {
  std::vector<std::pair<Vector, Vector>> pairs{{vec({1.0}), vec({0.5})}, {vec({0.0}), vec({0.1})}};
  const auto est = moment_estimator(pairs);
  CHECK(est.lambda(0, 0) == doctest::Approx((0.5 * 0.2) + (-0.5 * -0.2)));
  pairs.pop_back();
  CHECK_THROWS_AS(moment_estimator(pairs), ValidationError);
}
