#pragma once

#include "proxyopt/corpus.hpp"
#include "proxyopt/decision.hpp"
#include "proxyopt/denoise.hpp"
#include "proxyopt/noisescale.hpp"

#include <array>
#include <iosfwd>

namespace proxyopt {

/// Decision counts indexed [proxy decision][long-term decision] in the order
/// Positive, Neutral, Negative.
struct ContingencyTable {
  std::array<std::array<std::int64_t, 3>, 3> counts{};

  void add(Decision proxy, Decision long_term);
  std::int64_t at(Decision proxy, Decision long_term) const;
  std::int64_t total() const;
  /// Both significant, same direction.
  std::int64_t detections() const;
  /// Both significant, opposite directions.
  std::int64_t mistakes() const;
  std::int64_t long_term_significant() const;
  std::int64_t proxy_significant() const;
  bool operator==(const ContingencyTable&) const = default;
};

/// decide(w^T delta_hat_p, w^T xi_hat_pp w).
Decision composite_decision(const ExperimentRecord& record, const Vector& w);

ContingencyTable contingency(const Corpus& corpus, const Vector& w);

/// (detections - mistakes) / long-term-significant count.
double proxy_score(const ContingencyTable& table);

/// Fraction of experiments in which the proxy is significant.
double sensitivity(const ContingencyTable& table);

/// A row of the evaluation: either the sample-size-adaptive composite proxy
/// (weights re-optimized per test record) or a fixed weight vector.
struct WeightingMethod {
  enum class Kind { AdaptiveComposite, Fixed };

  std::string name;
  Kind kind = Kind::Fixed;
  Vector weights;  ///< used by Fixed

  static WeightingMethod adaptive(std::string name = "adaptive_composite");
  static WeightingMethod single_proxy(std::size_t num_proxies, std::size_t index, std::string name);
  static WeightingMethod fixed(std::string name, Vector weights);
};

/// Adaptive composite followed by every single proxy, in schema order.
std::vector<WeightingMethod> default_methods(const MetricSchema& schema);

struct MethodResult {
  std::string method;
  double sensitivity = 0;
  double proxy_score = 0;
  double proxy_quality = 0;
  ContingencyTable table;
};

struct EvalReport {
  std::vector<MethodResult> rows;
  const MethodResult& row(const std::string& method) const;
};

struct EvalOptions {
  std::size_t k = 4;
  std::uint64_t seed = 0;
  FitConfig fit;
  NoiseWeighting noise_weighting = NoiseWeighting::Precision;
};

/// Latent parameters and noise model fitted on one training fold.
struct FoldFit {
  LatentParams latent;
  NoiseModel noise;
};

FoldFit fit_training_fold(const Corpus& train, const EvalOptions& options, std::size_t fold_index);

/// Stratified k-fold evaluation. Each fold fits the latent model and xi_ref on
/// its training part only; decisions of all test records are pooled into one
/// table per method. Proxy quality is the mean over test records of
/// composite_quality at the record's predicted xi_pp with the fold's lambda.
EvalReport cv_evaluate(const Corpus& corpus, const std::vector<WeightingMethod>& methods,
                       const EvalOptions& options);

/// CSV with header method,sensitivity,proxy_score,proxy_quality.
void write_eval_csv(const EvalReport& report, std::ostream& out);
void print_eval_table(const EvalReport& report, std::ostream& out);

}  // namespace proxyopt
