#include "proxyopt/denoise.hpp"
#include "proxyopt/errors.hpp"
#include "proxyopt/random.hpp"

#include <cmath>
#include <future>
#include <numbers>
#include <sstream>

namespace proxyopt {

namespace {

// Dual averaging of the log step size toward a target acceptance rate.
class StepSizeAdapter {
 public:
  void restart(double step) {
    mu_ = std::log(10.0 * step);
    h_bar_ = 0.0;
    log_step_bar_ = 0.0;
    t_ = 0;
  }
  double update(double accept_prob) {
    ++t_;
    const double t = static_cast<double>(t_);
    const double eta = 1.0 / (t + kT0);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (kTarget - accept_prob);
    const double log_step = mu_ - std::sqrt(t) / kGamma * h_bar_;
    const double w = std::pow(t, -kKappa);
    log_step_bar_ = w * log_step + (1.0 - w) * log_step_bar_;
    return std::exp(log_step);
  }
  double final_step() const { return std::exp(log_step_bar_); }

 private:
  static constexpr double kTarget = 0.8;
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_ = 0, h_bar_ = 0, log_step_bar_ = 0;
  int t_ = 0;
};

struct ChainOutput {
  std::vector<Vector> draws;
  double accept_sum = 0;
  int divergences = 0;
};

class HmcChain {
 public:
  HmcChain(const LogPosterior& post, Vector theta, Rng rng)
      : post_(post), theta_(std::move(theta)), rng_(rng) {
    const auto n = theta_.size();
    chol_ = Matrix::Identity(n, n);
    logp_ = post_.value_and_gradient(theta_, grad_);
    if (!std::isfinite(logp_)) throw NumericalError("MCMC: log posterior is not finite at the chain start");
  }

  void set_metric(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) chol_ = llt.matrixL();
  }

  /// One transition; returns the acceptance probability.
  double step(double step_size, bool& divergent) {
    const auto n = theta_.size();
    Vector momentum(n);
    for (Eigen::Index i = 0; i < n; ++i) momentum(i) = standard_normal(rng_);
    // Random integration time around a quarter period of the whitened target.
    const double horizon = (0.5 + uniform01(rng_)) * 0.5 * std::numbers::pi;
    const int leaps = std::clamp(static_cast<int>(std::ceil(horizon / step_size)), 1, kMaxLeapfrog);

    Vector q = theta_;
    Vector g = grad_;
    Vector r = momentum;
    double logp = logp_;
    const double h0 = -logp_ + 0.5 * momentum.squaredNorm();
    divergent = false;
    r += 0.5 * step_size * (chol_.transpose() * g);
    for (int s = 0; s < leaps; ++s) {
      q += step_size * (chol_ * r);
      logp = post_.value_and_gradient(q, g);
      if (!std::isfinite(logp)) {
        divergent = true;
        break;
      }
      const double scale = (s + 1 == leaps) ? 0.5 : 1.0;
      r += scale * step_size * (chol_.transpose() * g);
    }
    double accept = 0.0;
    if (!divergent) {
      const double h1 = -logp + 0.5 * r.squaredNorm();
      const double delta = h0 - h1;
      if (!std::isfinite(delta) || -delta > 1000.0) {
        divergent = true;
      } else {
        accept = std::min(1.0, std::exp(delta));
        if (uniform01(rng_) < accept) {
          theta_ = q;
          grad_ = g;
          logp_ = logp;
        }
      }
    }
    return accept;
  }

  /// Heuristic initial step: double or halve until the one-step acceptance crosses 0.5.
  double find_initial_step() {
    double step = 0.1;
    const Vector saved_theta = theta_;
    const auto trial = [&](double eps) {
      const auto n = theta_.size();
      Vector r(n);
      for (Eigen::Index i = 0; i < n; ++i) r(i) = standard_normal(rng_);
      const double h0 = -logp_ + 0.5 * r.squaredNorm();
      Vector g;
      r += 0.5 * eps * (chol_.transpose() * grad_);
      const Vector q = theta_ + eps * (chol_ * r);
      const double lp = post_.value_and_gradient(q, g);
      if (!std::isfinite(lp)) return 0.0;
      r += 0.5 * eps * (chol_.transpose() * g);
      const double d = h0 - (-lp + 0.5 * r.squaredNorm());
      return std::isfinite(d) ? std::min(1.0, std::exp(d)) : 0.0;
    };
    const bool up = trial(step) > 0.5;
    for (int i = 0; i < 60; ++i) {
      const double a = trial(step);
      if (up ? a < 0.5 : a > 0.5) break;
      step = up ? step * 2.0 : step * 0.5;
    }
    theta_ = saved_theta;
    return std::clamp(step, 1e-8, 10.0);
  }

  const Vector& position() const { return theta_; }

 private:
  static constexpr int kMaxLeapfrog = 128;
  const LogPosterior& post_;
  Vector theta_;
  Vector grad_;
  double logp_ = 0;
  Matrix chol_;
  Rng rng_;
};

Matrix regularized_cov(const std::vector<Vector>& window) {
  const auto n = window.front().size();
  Vector mean = Vector::Zero(n);
  for (const auto& v : window) mean += v;
  mean /= static_cast<double>(window.size());
  Matrix cov = Matrix::Zero(n, n);
  for (const auto& v : window) cov += (v - mean) * (v - mean).transpose();
  const double count = static_cast<double>(window.size());
  cov /= std::max(count - 1.0, 1.0);
  const double shrink = 5.0 / (count + 5.0);
  Matrix reg = (1.0 - shrink) * cov;
  reg.diagonal() += shrink * 1e-3 * cov.diagonal().cwiseMax(1e-300) + Vector::Constant(n, 1e-300);
  return symmetrize(reg);
}

ChainOutput run_chain(const LogPosterior& post, Vector start, int warmup, int samples, Rng rng) {
  HmcChain chain(post, std::move(start), rng);
  StepSizeAdapter adapter;
  double step = chain.find_initial_step();
  adapter.restart(step);

  // Warmup windows: fast step-size phase, doubling metric windows, final step-size phase.
  int init_buffer = 75, term_buffer = 50, base_window = 25;
  if (warmup < init_buffer + term_buffer + base_window) {
    init_buffer = static_cast<int>(0.15 * warmup);
    term_buffer = static_cast<int>(0.1 * warmup);
    base_window = warmup - init_buffer - term_buffer;
  }
  const int slow_end = warmup - term_buffer;
  int window_size = base_window;
  int window_end = init_buffer + window_size;
  std::vector<Vector> window;

  ChainOutput out;
  bool divergent = false;
  for (int it = 0; it < warmup; ++it) {
    const double accept = chain.step(step, divergent);
    step = adapter.update(accept);
    if (it >= init_buffer && it < slow_end) {
      window.push_back(chain.position());
      if (it + 1 == window_end) {
        chain.set_metric(regularized_cov(window));
        window.clear();
        window_size *= 2;
        window_end = it + 1 + window_size;
        // Absorb a short tail into the last slow window.
        if (window_end + 2 * window_size > slow_end) window_end = slow_end;
        step = chain.find_initial_step();
        adapter.restart(step);
      }
    }
  }
  step = adapter.final_step();

  out.draws.reserve(static_cast<std::size_t>(samples));
  for (int it = 0; it < samples; ++it) {
    out.accept_sum += chain.step(step, divergent);
    if (divergent) ++out.divergences;
    out.draws.push_back(chain.position());
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) throw ValidationError("split_rhat needs at least 4 draws per chain");
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means;
  double w = 0;
  for (const auto& h : halves) {
    means.push_back(mean_of(h));
    w += var_of(h);
  }
  w /= static_cast<double>(halves.size());
  const double b_over_n = var_of(means);
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  if (!(w > 0)) return var_plus > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  if (n < 4) throw ValidationError("effective_sample_size needs at least 4 draws per chain");
  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    means[j] = mean_of(chains[j]);
    vars[j] = var_of(chains[j]);
  }
  double w = 0;
  for (double v : vars) w += v;
  w /= static_cast<double>(m);
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * w + (m > 1 ? var_of(means) : 0.0);
  if (!(var_plus > 0)) return static_cast<double>(m * n);

  const auto mean_acov = [&](std::size_t lag) {
    double total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (chains[j][i] - means[j]) * (chains[j][i + lag] - means[j]);
      total += s / nd;
    }
    return total / static_cast<double>(m);
  };
  const auto rho = [&](std::size_t lag) { return 1.0 - (w - mean_acov(lag)) / var_plus; };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (!(pair > 0)) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  const double total = static_cast<double>(m * n);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

McmcResult fit_mcmc(const Corpus& corpus, const PriorSpec& prior, const FitConfig& config) {
  config.validate();
  if (corpus.empty()) throw ValidationError("cannot fit an empty corpus");
  const std::size_t p = corpus.dim();
  const LogPosterior post(corpus, prior);
  const Vector center = to_unconstrained(initial_params(corpus, prior));
  const auto pi = static_cast<Eigen::Index>(p);

  std::vector<std::future<ChainOutput>> futures;
  for (int c = 0; c < config.mcmc_chains; ++c) {
    Rng rng = make_rng(config.seed, "mcmc/chain" + std::to_string(c));
    Vector start = center;
    for (Eigen::Index a = 0; a < pi; ++a) {
      start(a) += 0.1 * prior.devscale(a) * (2.0 * uniform01(rng) - 1.0);
      start(pi + a) += 0.5 * (2.0 * uniform01(rng) - 1.0);
    }
    for (Eigen::Index k = 2 * pi; k < start.size(); ++k) start(k) += 0.5 * (2.0 * uniform01(rng) - 1.0);
    futures.push_back(std::async(std::launch::async, run_chain, std::cref(post), std::move(start),
                                 config.mcmc_warmup, config.mcmc_samples, rng));
  }
  std::vector<ChainOutput> outputs;
  for (auto& f : futures) outputs.push_back(f.get());

  // Per-draw constrained parameters: mu entries then lambda lower triangle.
  std::vector<std::string> names;
  for (std::size_t a = 0; a < p; ++a) names.push_back("mu[" + std::to_string(a) + "]");
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b <= a; ++b)
      names.push_back("lambda[" + std::to_string(a) + "," + std::to_string(b) + "]");
  const std::size_t num_scalars = names.size();
  std::vector<std::vector<std::vector<double>>> traces(
      num_scalars, std::vector<std::vector<double>>(outputs.size()));

  McmcResult result;
  result.chains = config.mcmc_chains;
  result.draws_per_chain = config.mcmc_samples;
  double accept = 0;
  for (std::size_t c = 0; c < outputs.size(); ++c) {
    accept += outputs[c].accept_sum;
    result.divergences += outputs[c].divergences;
    for (const auto& theta : outputs[c].draws) {
      const LatentParams draw = from_unconstrained(theta, p);
      std::size_t k = 0;
      for (Eigen::Index a = 0; a < pi; ++a) traces[k++][c].push_back(draw.mu(a));
      for (Eigen::Index a = 0; a < pi; ++a)
        for (Eigen::Index b = 0; b <= a; ++b) traces[k++][c].push_back(draw.lambda(a, b));
    }
  }
  result.acceptance_rate = accept / static_cast<double>(config.mcmc_chains * config.mcmc_samples);

  std::vector<double> means(num_scalars), sds(num_scalars);
  result.converged = true;
  for (std::size_t k = 0; k < num_scalars; ++k) {
    std::vector<double> pooled;
    for (const auto& chain : traces[k]) pooled.insert(pooled.end(), chain.begin(), chain.end());
    ParameterDiagnostic diag;
    diag.name = names[k];
    diag.mean = mean_of(pooled);
    diag.sd = std::sqrt(var_of(pooled));
    diag.rhat = split_rhat(traces[k]);
    diag.ess = effective_sample_size(traces[k]);
    means[k] = diag.mean;
    sds[k] = diag.sd;
    if (!(diag.rhat <= config.rhat_threshold)) {
      result.converged = false;
      std::ostringstream msg;
      msg << "r-hat " << diag.rhat << " for " << diag.name << " exceeds " << config.rhat_threshold;
      result.warnings.push_back(msg.str());
    }
    result.diagnostics.push_back(std::move(diag));
  }
  if (result.divergences > 0)
    result.warnings.push_back(std::to_string(result.divergences) + " divergent transitions after warmup");

  const auto unpack = [&](const std::vector<double>& values) {
    LatentParams out{Vector(pi), Matrix(pi, pi)};
    std::size_t k = 0;
    for (Eigen::Index a = 0; a < pi; ++a) out.mu(a) = values[k++];
    for (Eigen::Index a = 0; a < pi; ++a)
      for (Eigen::Index b = 0; b <= a; ++b) {
        out.lambda(a, b) = values[k];
        out.lambda(b, a) = values[k];
        ++k;
      }
    return out;
  };
  result.posterior_mean = unpack(means);
  result.posterior_sd = unpack(sds);
  return result;
}

}  // namespace proxyopt
