#include "proxyopt/corpus.hpp"

#include "proxyopt/decision.hpp"
#include "proxyopt/errors.hpp"
#include "proxyopt/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace proxyopt {

using nlohmann::json;

void MetricSchema::validate() const {
  if (proxy_names.empty()) throw ValidationError("schema needs at least one proxy metric");
  if (long_term_name.empty()) throw ValidationError("schema long-term metric name is empty");
  std::unordered_set<std::string> seen{long_term_name};
  for (const auto& name : proxy_names) {
    if (name.empty()) throw ValidationError("schema proxy name is empty");
    if (!seen.insert(name).second) throw ValidationError("duplicate metric name '" + name + "'");
  }
}

namespace {

void check_covariance(const Matrix& m, const std::string& what, const std::string& id) {
  if (!m.allFinite()) throw ValidationError("record '" + id + "': " + what + " has non-finite entries");
  if (!is_symmetric(m)) throw ValidationError("record '" + id + "': " + what + " is not symmetric");
  const double lo = min_eigenvalue(m);
  if (lo < -1e-9 * std::abs(m.trace())) {
    std::ostringstream msg;
    msg << "record '" << id << "': " << what << " is not positive semidefinite (min eigenvalue " << lo
        << ")";
    throw ValidationError(msg.str());
  }
}

}  // namespace

void validate_record(const ExperimentRecord& rec, std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  if (rec.id.empty()) throw ValidationError("record with empty id");
  if (rec.n < 1) throw ValidationError("record '" + rec.id + "': n must be >= 1");
  if (rec.delta_hat.size() != n || rec.xi_hat.rows() != n || rec.xi_hat.cols() != n) {
    std::ostringstream msg;
    msg << "record '" << rec.id << "': dimension mismatch (expected " << dim << " metrics, got "
        << rec.delta_hat.size() << ")";
    throw ValidationError(msg.str());
  }
  if (!rec.delta_hat.allFinite())
    throw ValidationError("record '" + rec.id + "': delta_hat has non-finite entries");
  check_covariance(rec.xi_hat, "xi_hat", rec.id);
}

void validate_pending(const PendingExperiment& p, std::size_t num_proxies) {
  const auto d = static_cast<Eigen::Index>(num_proxies);
  if (p.id.empty()) throw ValidationError("pending experiment with empty id");
  if (p.n < 1) throw ValidationError("pending '" + p.id + "': n must be >= 1");
  if (p.delta_hat_p.has_value() != p.xi_hat_pp.has_value())
    throw ValidationError("pending '" + p.id + "': delta_hat_p and xi_hat_pp must be given together");
  if (p.delta_hat_p) {
    if (p.delta_hat_p->size() != d || p.xi_hat_pp->rows() != d)
      throw ValidationError("pending '" + p.id + "': dimension mismatch");
    if (!p.delta_hat_p->allFinite())
      throw ValidationError("pending '" + p.id + "': delta_hat_p has non-finite entries");
    check_covariance(*p.xi_hat_pp, "xi_hat_pp", p.id);
  }
}

Corpus::Corpus(MetricSchema schema, std::vector<ExperimentRecord> records)
    : schema_(std::move(schema)), records_(std::move(records)) {
  schema_.validate();
  std::unordered_set<std::string> ids;
  for (const auto& rec : records_) {
    validate_record(rec, schema_.dim());
    if (!ids.insert(rec.id).second) throw ValidationError("duplicate record id '" + rec.id + "'");
  }
}

Corpus Corpus::subset(const std::vector<std::size_t>& indices) const {
  std::vector<ExperimentRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(records_.at(i));
  return Corpus(schema_, std::move(out));
}

Vector Corpus::sample_mean() const {
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(dim()));
  for (const auto& r : records_) mean += r.delta_hat;
  return records_.empty() ? mean : Vector(mean / static_cast<double>(records_.size()));
}

Matrix Corpus::sample_covariance() const {
  const auto p = static_cast<Eigen::Index>(dim());
  Matrix cov = Matrix::Zero(p, p);
  if (records_.size() < 2) return cov;
  const Vector mean = sample_mean();
  for (const auto& r : records_) {
    const Vector c = r.delta_hat - mean;
    cov += c * c.transpose();
  }
  return cov / static_cast<double>(records_.size() - 1);
}

Matrix Corpus::mean_xi() const {
  const auto p = static_cast<Eigen::Index>(dim());
  Matrix acc = Matrix::Zero(p, p);
  for (const auto& r : records_) acc += r.xi_hat;
  return records_.empty() ? acc : Matrix(acc / static_cast<double>(records_.size()));
}

// ---------------------------------------------------------------------------
// JSON-lines I/O

namespace {

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw ValidationError("line " + std::to_string(line) + ": " + what);
}

json parse_line(const std::string& text, std::size_t line) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) fail_line(line, "expected a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    fail_line(line, std::string("parse error: ") + e.what());
  }
}

std::vector<double> number_array(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) fail_line(line, std::string("missing field '") + key + "'");
  const auto& arr = j.at(key);
  if (!arr.is_array()) fail_line(line, std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) fail_line(line, std::string("field '") + key + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string string_field(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_string())
    fail_line(line, std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

std::int64_t size_field(const json& j, std::size_t line) {
  if (!j.contains("n") || !j.at("n").is_number_integer())
    fail_line(line, "missing integer field 'n'");
  return j.at("n").get<std::int64_t>();
}

MetricSchema parse_header(const std::string& text) {
  const json h = parse_line(text, 1);
  MetricSchema schema;
  schema.long_term_name = string_field(h, "long_term", 1);
  if (!h.contains("proxies") || !h.at("proxies").is_array())
    fail_line(1, "header needs a 'proxies' array");
  for (const auto& p : h.at("proxies")) {
    if (!p.is_string()) fail_line(1, "proxy names must be strings");
    schema.proxy_names.push_back(p.get<std::string>());
  }
  try {
    schema.validate();
  } catch (const ValidationError& e) {
    fail_line(1, e.what());
  }
  return schema;
}

json header_json(const MetricSchema& schema) {
  return json{{"long_term", schema.long_term_name}, {"proxies", schema.proxy_names}};
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    fn(text, line);
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

Corpus parse_corpus(std::istream& in) {
  std::optional<MetricSchema> schema;
  std::vector<ExperimentRecord> records;
  std::unordered_set<std::string> ids;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    if (!schema) {
      schema = parse_header(text);
      return;
    }
    const json j = parse_line(text, line);
    ExperimentRecord rec;
    rec.id = string_field(j, "id", line);
    rec.n = size_field(j, line);
    const auto delta = number_array(j, "delta_hat", line);
    const auto lower = number_array(j, "xi_hat_lower", line);
    const std::size_t dim = schema->dim();
    if (delta.size() != dim || lower.size() != lower_size(dim)) {
      std::ostringstream msg;
      msg << "record '" << rec.id << "': dimension mismatch (schema has " << dim
          << " metrics, delta_hat has " << delta.size() << ", xi_hat_lower has " << lower.size() << ")";
      fail_line(line, msg.str());
    }
    rec.delta_hat = to_vector(delta);
    rec.xi_hat = unpack_lower(lower, dim);
    try {
      validate_record(rec, dim);
    } catch (const ValidationError& e) {
      fail_line(line, e.what());
    }
    if (!ids.insert(rec.id).second) fail_line(line, "duplicate record id '" + rec.id + "'");
    records.push_back(std::move(rec));
  });
  if (!schema) throw ValidationError("corpus file is empty (missing header line)");
  return Corpus(std::move(*schema), std::move(records));
}

Corpus load_corpus(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_corpus(in);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  out << header_json(corpus.schema()).dump() << '\n';
  for (const auto& rec : corpus.records()) {
    json j = {{"id", rec.id},
              {"n", rec.n},
              {"delta_hat", to_std(rec.delta_hat)},
              {"xi_hat_lower", pack_lower(rec.xi_hat)}};
    out << j.dump() << '\n';
  }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_output(path);
  write_corpus(corpus, out);
}

PendingSet parse_pending(std::istream& in) {
  std::optional<MetricSchema> schema;
  std::vector<PendingExperiment> experiments;
  for_each_line(in, [&](const std::string& text, std::size_t line) {
    if (!schema) {
      schema = parse_header(text);
      return;
    }
    const json j = parse_line(text, line);
    PendingExperiment p;
    p.id = string_field(j, "id", line);
    p.n = size_field(j, line);
    const std::size_t d = schema->num_proxies();
    if (j.contains("delta_hat_p")) {
      const auto delta = number_array(j, "delta_hat_p", line);
      if (delta.size() != d) fail_line(line, "pending '" + p.id + "': dimension mismatch in delta_hat_p");
      p.delta_hat_p = to_vector(delta);
    }
    if (j.contains("xi_hat_pp_lower")) {
      const auto lower = number_array(j, "xi_hat_pp_lower", line);
      if (lower.size() != lower_size(d))
        fail_line(line, "pending '" + p.id + "': dimension mismatch in xi_hat_pp_lower");
      p.xi_hat_pp = unpack_lower(lower, d);
    }
    try {
      validate_pending(p, d);
    } catch (const ValidationError& e) {
      fail_line(line, e.what());
    }
    experiments.push_back(std::move(p));
  });
  if (!schema) throw ValidationError("pending file is empty (missing header line)");
  return {std::move(*schema), std::move(experiments)};
}

PendingSet load_pending(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_pending(in);
}

void write_pending(const PendingSet& pending, std::ostream& out) {
  out << header_json(pending.schema).dump() << '\n';
  for (const auto& p : pending.experiments) {
    json j = {{"id", p.id}, {"n", p.n}};
    if (p.delta_hat_p) j["delta_hat_p"] = to_std(*p.delta_hat_p);
    if (p.xi_hat_pp) j["xi_hat_pp_lower"] = pack_lower(*p.xi_hat_pp);
    out << j.dump() << '\n';
  }
}

void save_pending(const PendingSet& pending, const std::filesystem::path& path) {
  auto out = open_output(path);
  write_pending(pending, out);
}

// ---------------------------------------------------------------------------
// Folds

std::vector<std::size_t> stratified_fold_assignment(const Corpus& corpus, std::size_t k,
                                                    std::uint64_t seed) {
  if (k < 2) throw ValidationError("k-fold needs k >= 2");
  if (corpus.size() < k) {
    throw ValidationError("cannot build " + std::to_string(k) + " folds from " +
                          std::to_string(corpus.size()) + " records");
  }
  std::array<std::vector<std::size_t>, 3> strata;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus[i];
    strata[static_cast<std::size_t>(decide(r.delta_hat(0), r.xi_hat(0, 0)))].push_back(i);
  }
  // Order within a stratum is by id so the assignment does not depend on corpus order.
  Rng rng = make_rng(seed, "folds");
  std::vector<std::size_t> dealt;
  for (auto& stratum : strata) {
    std::sort(stratum.begin(), stratum.end(),
              [&](std::size_t a, std::size_t b) { return corpus[a].id < corpus[b].id; });
    for (std::size_t i = stratum.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng() % i);
      std::swap(stratum[i - 1], stratum[j]);
    }
    dealt.insert(dealt.end(), stratum.begin(), stratum.end());
  }
  std::vector<std::size_t> fold(corpus.size());
  for (std::size_t pos = 0; pos < dealt.size(); ++pos) fold[dealt[pos]] = pos % k;
  return fold;
}

std::vector<Fold> stratified_kfold(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
  const auto assignment = stratified_fold_assignment(corpus, k, seed);
  std::vector<Fold> folds;
  folds.reserve(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < corpus.size(); ++i) (assignment[i] == f ? test : train).push_back(i);
    folds.push_back({corpus.subset(train), corpus.subset(test)});
  }
  return folds;
}

}  // namespace proxyopt
