#pragma once

#include "proxyopt/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace proxyopt {

/// Names of the long-term outcome and the d proxy metrics.
struct MetricSchema {
  std::string long_term_name;
  std::vector<std::string> proxy_names;

  std::size_t num_proxies() const { return proxy_names.size(); }
  /// d + 1: long-term outcome followed by the proxies.
  std::size_t dim() const { return proxy_names.size() + 1; }

  void validate() const;
  bool operator==(const MetricSchema&) const = default;
};

/// One historical A/B test. Index 0 of delta_hat / xi_hat is the long-term
/// outcome, indices 1..d the proxies.
struct ExperimentRecord {
  std::string id;
  std::int64_t n = 1;
  Vector delta_hat;
  Matrix xi_hat;

  /// Proxy block of delta_hat (length d).
  Vector delta_p() const { return delta_hat.tail(delta_hat.size() - 1); }
  /// Proxy-proxy block of xi_hat (d x d).
  Matrix xi_pp() const {
    const auto d = xi_hat.rows() - 1;
    return xi_hat.bottomRightCorner(d, d);
  }
};

/// A new experiment for which only proxy measurements (or only its size) exist.
struct PendingExperiment {
  std::string id;
  std::int64_t n = 1;
  std::optional<Vector> delta_hat_p;
  std::optional<Matrix> xi_hat_pp;
};

/// Throws ValidationError naming the record when it breaks an invariant
/// (dimension, finiteness, n >= 1, symmetry, PSD).
void validate_record(const ExperimentRecord& rec, std::size_t dim);
void validate_pending(const PendingExperiment& p, std::size_t num_proxies);

/// Validated, immutable collection of experiment records sharing one schema.
class Corpus {
 public:
  Corpus(MetricSchema schema, std::vector<ExperimentRecord> records);

  const MetricSchema& schema() const { return schema_; }
  const std::vector<ExperimentRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t dim() const { return schema_.dim(); }
  std::size_t num_proxies() const { return schema_.num_proxies(); }
  const ExperimentRecord& operator[](std::size_t i) const { return records_[i]; }

  Corpus subset(const std::vector<std::size_t>& indices) const;

  /// Sample mean and (n-1)-normalized sample covariance of the delta_hat vectors.
  Vector sample_mean() const;
  Matrix sample_covariance() const;
  /// Average of the xi_hat matrices.
  Matrix mean_xi() const;

 private:
  MetricSchema schema_;
  std::vector<ExperimentRecord> records_;
};

/// Corpus file: JSON lines, header line then one record per line.
Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::istream& in);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, std::ostream& out);

struct PendingSet {
  MetricSchema schema;
  std::vector<PendingExperiment> experiments;
};

PendingSet load_pending(const std::filesystem::path& path);
PendingSet parse_pending(std::istream& in);
void save_pending(const PendingSet& pending, const std::filesystem::path& path);
void write_pending(const PendingSet& pending, std::ostream& out);

struct Fold {
  Corpus train;
  Corpus test;
};

/// k folds whose test sets partition the corpus. Records are stratified by the
/// long-term decision (decide(delta_hat[0], xi_hat(0,0))); each stratum is
/// shuffled with the seed and dealt round-robin so both fold sizes and
/// per-stratum counts differ by at most one between folds.
std::vector<Fold> stratified_kfold(const Corpus& corpus, std::size_t k, std::uint64_t seed);

/// Fold index of every record, in corpus order (the assignment behind stratified_kfold).
std::vector<std::size_t> stratified_fold_assignment(const Corpus& corpus, std::size_t k,
                                                    std::uint64_t seed);

}  // namespace proxyopt
