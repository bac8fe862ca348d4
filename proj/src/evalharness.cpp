#include "proxyopt/evalharness.hpp"

#include "proxyopt/errors.hpp"
#include "proxyopt/portfolio.hpp"
#include "proxyopt/random.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace proxyopt {

Decision decide(double delta_hat, double var_hat) {
  if (!std::isfinite(delta_hat) || !std::isfinite(var_hat))
    throw ValidationError("decide: inputs must be finite");
  if (!(var_hat > 0)) throw ValidationError("decide: variance must be positive");
  const double t = delta_hat / std::sqrt(var_hat);
  if (t > kSignificanceThreshold) return Decision::Positive;
  if (t < -kSignificanceThreshold) return Decision::Negative;
  return Decision::Neutral;
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::Positive: return "+";
    case Decision::Neutral: return "0";
    case Decision::Negative: return "-";
  }
  return "?";
}

namespace {
constexpr std::size_t idx(Decision d) { return static_cast<std::size_t>(d); }
constexpr std::size_t kPos = idx(Decision::Positive);
constexpr std::size_t kNeg = idx(Decision::Negative);
}  // namespace

void ContingencyTable::add(Decision proxy, Decision long_term) { ++counts[idx(proxy)][idx(long_term)]; }

std::int64_t ContingencyTable::at(Decision proxy, Decision long_term) const {
  return counts[idx(proxy)][idx(long_term)];
}

std::int64_t ContingencyTable::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts)
    for (auto c : row) t += c;
  return t;
}

std::int64_t ContingencyTable::detections() const { return counts[kPos][kPos] + counts[kNeg][kNeg]; }
std::int64_t ContingencyTable::mistakes() const { return counts[kPos][kNeg] + counts[kNeg][kPos]; }

std::int64_t ContingencyTable::long_term_significant() const {
  std::int64_t t = 0;
  for (const auto& row : counts) t += row[kPos] + row[kNeg];
  return t;
}

std::int64_t ContingencyTable::proxy_significant() const {
  std::int64_t t = 0;
  for (std::size_t j = 0; j < 3; ++j) t += counts[kPos][j] + counts[kNeg][j];
  return t;
}

Decision composite_decision(const ExperimentRecord& record, const Vector& w) {
  const auto d = record.delta_hat.size() - 1;
  if (w.size() != d) throw ValidationError("composite_decision: weight dimension mismatch for '" + record.id + "'");
  const double value = w.dot(record.delta_p());
  const double var = w.dot(record.xi_pp() * w);
  if (!(var > 0)) throw NumericalError("composite_decision: degenerate composite variance for '" + record.id + "'");
  return decide(value, var);
}

ContingencyTable contingency(const Corpus& corpus, const Vector& w) {
  if (corpus.empty()) throw ValidationError("contingency: empty corpus");
  ContingencyTable t;
  for (const auto& r : corpus.records()) t.add(composite_decision(r, w), decide(r.delta_hat(0), r.xi_hat(0, 0)));
  return t;
}

double proxy_score(const ContingencyTable& table) {
  const auto denom = table.long_term_significant();
  if (denom <= 0) throw ValidationError("proxy score undefined: no experiment has a significant long-term outcome");
  return static_cast<double>(table.detections() - table.mistakes()) / static_cast<double>(denom);
}

double sensitivity(const ContingencyTable& table) {
  const auto total = table.total();
  if (total <= 0) throw ValidationError("sensitivity undefined: empty table");
  return static_cast<double>(table.proxy_significant()) / static_cast<double>(total);
}

WeightingMethod WeightingMethod::adaptive(std::string name) {
  return {std::move(name), Kind::AdaptiveComposite, Vector()};
}

WeightingMethod WeightingMethod::single_proxy(std::size_t num_proxies, std::size_t index, std::string name) {
  if (index >= num_proxies) throw ValidationError("single_proxy index out of range");
  Vector w = Vector::Zero(static_cast<Eigen::Index>(num_proxies));
  w(static_cast<Eigen::Index>(index)) = 1.0;
  return {std::move(name), Kind::Fixed, std::move(w)};
}

WeightingMethod WeightingMethod::fixed(std::string name, Vector weights) {
  if (weights.size() < 1 || (weights.array() < 0).any() || std::abs(weights.sum() - 1.0) > 1e-9)
    throw ValidationError("fixed weights must lie on the simplex");
  return {std::move(name), Kind::Fixed, std::move(weights)};
}

std::vector<WeightingMethod> default_methods(const MetricSchema& schema) {
  std::vector<WeightingMethod> out{WeightingMethod::adaptive()};
  for (std::size_t j = 0; j < schema.num_proxies(); ++j)
    out.push_back(WeightingMethod::single_proxy(schema.num_proxies(), j, schema.proxy_names[j]));
  return out;
}

const MethodResult& EvalReport::row(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw ValidationError("no evaluation row named '" + method + "'");
}

FoldFit fit_training_fold(const Corpus& train, const EvalOptions& options, std::size_t fold_index) {
  const PriorSpec prior = PriorSpec::from_corpus(train);
  FitConfig fit = options.fit;
  fit.seed = derive_seed(options.seed, "eval/fold" + std::to_string(fold_index));
  LatentParams latent = fit.method == FitMethod::Mcmc ? fit_mcmc(train, prior, fit).posterior_mean
                                                      : fit_map(train, prior, fit).params;
  return {std::move(latent), estimate_xi_ref(train, options.noise_weighting)};
}

EvalReport cv_evaluate(const Corpus& corpus, const std::vector<WeightingMethod>& methods,
                       const EvalOptions& options) {
  if (methods.empty()) throw ValidationError("cv_evaluate needs at least one method");
  const auto d = static_cast<Eigen::Index>(corpus.num_proxies());
  for (const auto& m : methods)
    if (m.kind == WeightingMethod::Kind::Fixed && m.weights.size() != d)
      throw ValidationError("method '" + m.name + "' has the wrong weight dimension");

  const auto folds = stratified_kfold(corpus, options.k, options.seed);
  std::vector<ContingencyTable> tables(methods.size());
  std::vector<double> quality_sum(methods.size(), 0.0);
  std::size_t scored = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldFit fit;
    try {
      fit = fit_training_fold(folds[f].train, options, f);
    } catch (const NumericalError& e) {
      throw NumericalError("fold " + std::to_string(f) + ": " + e.what());
    }
    for (const auto& rec : folds[f].test.records()) {
      const Matrix xi_pred = predict_xi_pp(fit.noise, rec.n);
      const Decision long_term = decide(rec.delta_hat(0), rec.xi_hat(0, 0));
      for (std::size_t m = 0; m < methods.size(); ++m) {
        Vector w;
        double quality;
        if (methods[m].kind == WeightingMethod::Kind::AdaptiveComposite) {
          const ProxyWeights pw = optimize_weights(fit.latent, xi_pred);
          w = pw.w;
          quality = pw.rho;
        } else {
          w = methods[m].weights;
          quality = composite_quality(w, fit.latent, xi_pred);
        }
        tables[m].add(composite_decision(rec, w), long_term);
        quality_sum[m] += quality;
      }
      ++scored;
    }
  }
  EvalReport report;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    report.rows.push_back({methods[m].name, sensitivity(tables[m]), proxy_score(tables[m]),
                           quality_sum[m] / static_cast<double>(scored), tables[m]});
  }
  return report;
}

void write_eval_csv(const EvalReport& report, std::ostream& out) {
  out << "method,sensitivity,proxy_score,proxy_quality\n";
  out << std::setprecision(17);
  for (const auto& r : report.rows)
    out << r.method << ',' << r.sensitivity << ',' << r.proxy_score << ',' << r.proxy_quality << '\n';
}

void print_eval_table(const EvalReport& report, std::ostream& out) {
  std::size_t width = 6;
  for (const auto& r : report.rows) width = std::max(width, r.method.size());
  out << std::left << std::setw(static_cast<int>(width)) << "method" << std::right << std::setw(13)
      << "sensitivity" << std::setw(13) << "proxy_score" << std::setw(15) << "proxy_quality" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : report.rows)
    out << std::left << std::setw(static_cast<int>(width)) << r.method << std::right << std::setw(13)
        << r.sensitivity << std::setw(13) << r.proxy_score << std::setw(15) << r.proxy_quality << '\n';
  out.unsetf(std::ios::floatfield);
}

}  // namespace proxyopt
