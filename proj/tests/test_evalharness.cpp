#include "doctest.h"
#include "test_helpers.hpp"

#include "proxyopt/errors.hpp"
#include "proxyopt/evalharness.hpp"
#include "proxyopt/synthgen.hpp"

#include <algorithm>
#include <sstream>

using namespace proxyopt;
using namespace proxyopt::testing;

namespace {

// One proxy, unit noise: t-statistics equal the deltas.
Corpus hand_fixture() {
  const std::vector<std::pair<double, double>> t{{3, 3},  {2.5, 4}, {-3, -2.5}, {3, -3},   {0.5, 3},
                                                  {0, 0},  {1, -1},  {-1, 1},    {1.9, 1.9}, {-2, 2}};
  std::vector<ExperimentRecord> records;
  for (std::size_t i = 0; i < t.size(); ++i)
    records.push_back(make_record("e" + std::to_string(i), 100, vec({t[i].second, t[i].first}), Matrix::Identity(2, 2)));
  return Corpus(default_schema(1), records);
}

Corpus synthetic(std::size_t k, std::uint64_t seed) {
  Matrix lambda(3, 3);
  lambda << 1.0, 0.5, 0.3, 0.5, 1.0, 0.2, 0.3, 0.2, 1.0;
  Matrix xi_ref(3, 3);
  xi_ref << 2e4, 0, 0, 0, 1e4, 0, 0, 0, 3e3;
  GenSpec spec;
  spec.mu = Vector::Zero(3);
  spec.lambda = 0.01 * lambda;
  std::vector<std::int64_t> sizes;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) sizes.push_back(static_cast<std::int64_t>(1e5 * std::exp(3 * uniform01(rng))));
  spec.noise = ScaledNoise{xi_ref, sizes};
  spec.num_records = k;
  spec.seed = seed;
  return generate(spec).corpus;
}

void check_same(const EvalReport& a, const EvalReport& b) {
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].method == b.rows[i].method);
    CHECK(a.rows[i].table == b.rows[i].table);
    CHECK(a.rows[i].proxy_score == b.rows[i].proxy_score);
    CHECK(a.rows[i].sensitivity == b.rows[i].sensitivity);
    CHECK(a.rows[i].proxy_quality == doctest::Approx(b.rows[i].proxy_quality).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("decide") {
  CHECK(decide(2.5, 1.0) == Decision::Positive);
  CHECK(decide(-1.0, 1.0) == Decision::Neutral);
  CHECK(decide(-2.0, 1.0) == Decision::Neutral);
  CHECK(decide(2.0, 1.0) == Decision::Neutral);
  CHECK(decide(-2.0001, 1.0) == Decision::Negative);
  CHECK(decide(0.3, 0.01) == Decision::Positive);
  CHECK_THROWS_AS(decide(1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(decide(1.0, -1.0), ValidationError);
  CHECK(to_string(Decision::Neutral) == "0");
  CHECK(to_string(Decision::Negative) == "-");
}

TEST_CASE("composite_decision") {
  const auto r = make_record("x", 1, vec({0.0, 3.0, -1.0}), Matrix::Identity(3, 3));
  CHECK(composite_decision(r, vec({0.5, 0.5})) == Decision::Neutral);  // t = 1 / sqrt(0.5)
  CHECK(composite_decision(r, vec({1.0, 0.0})) == decide(3.0, 1.0));
  CHECK(composite_decision(r, vec({0.0, 1.0})) == decide(-1.0, 1.0));
  const auto twin = make_record("y", 1, vec({0.0, 2.5, 2.5}), Matrix::Ones(3, 3));
  CHECK(composite_decision(twin, vec({0.5, 0.5})) == decide(2.5, 1.0));
  CHECK_THROWS_AS(composite_decision(r, vec({1.0})), ValidationError);
}

TEST_CASE("contingency, proxy_score and sensitivity on the hand fixture") {
  const auto table = contingency(hand_fixture(), vec({1.0}));
  CHECK(table.total() == 10);
  CHECK(table.detections() == 3);
  CHECK(table.mistakes() == 1);
  CHECK(table.proxy_significant() == 4);
  CHECK(table.long_term_significant() == 5);
  CHECK(table.at(Decision::Positive, Decision::Positive) == 2);
  CHECK(table.at(Decision::Negative, Decision::Negative) == 1);
  CHECK(table.at(Decision::Positive, Decision::Negative) == 1);
  CHECK(table.at(Decision::Neutral, Decision::Positive) == 1);
  CHECK(table.at(Decision::Neutral, Decision::Neutral) == 5);
  CHECK(proxy_score(table) == doctest::Approx(0.4));
  CHECK(sensitivity(table) == doctest::Approx(0.4));
}

TEST_CASE("contingency edge cases") {
  std::vector<ExperimentRecord> strong, flat;
  for (int i = 0; i < 6; ++i) {
    strong.push_back(make_record("s" + std::to_string(i), 1, vec({5.0, 4.0}), Matrix::Identity(2, 2)));
    flat.push_back(make_record("f" + std::to_string(i), 1, vec({i % 2 ? 5.0 : -5.0, 0.0}), Matrix::Identity(2, 2)));
  }
  const auto t1 = contingency(Corpus(default_schema(1), strong), vec({1.0}));
  CHECK(t1.at(Decision::Positive, Decision::Positive) == 6);
  CHECK(proxy_score(t1) == 1.0);
  CHECK(sensitivity(t1) == 1.0);
  const auto t2 = contingency(Corpus(default_schema(1), flat), vec({1.0}));
  std::int64_t middle = 0;
  for (int j = 0; j < 3; ++j) middle += t2.counts[1][static_cast<std::size_t>(j)];
  CHECK(middle == 6);
  CHECK(proxy_score(t2) == 0.0);
  CHECK(sensitivity(t2) == 0.0);
  ContingencyTable empty;
  CHECK_THROWS_AS(sensitivity(empty), ValidationError);
  empty.add(Decision::Positive, Decision::Neutral);
  CHECK_THROWS_AS(proxy_score(empty), ValidationError);
}

TEST_CASE("methods") {
  const auto methods = default_methods(default_schema(3));
  REQUIRE(methods.size() == 4);
  CHECK(methods[0].kind == WeightingMethod::Kind::AdaptiveComposite);
  CHECK(methods[2].weights == vec({0.0, 1.0, 0.0}));
  CHECK(methods[2].name == "proxy_2");
  CHECK_THROWS_AS(WeightingMethod::fixed("bad", vec({0.5, 0.4})), ValidationError);
  CHECK_THROWS_AS(WeightingMethod::fixed("neg", vec({1.5, -0.5})), ValidationError);
}

TEST_CASE("cv_evaluate: perfect surrogate has proxy score 1") {
  Rng rng(8);
  std::vector<ExperimentRecord> records;
  for (int i = 0; i < 60; ++i) {
    const double x = 0.1 * standard_normal(rng);
    records.push_back(make_record("r" + std::to_string(i), 1000, vec({x, x}), 1e-4 * Matrix::Identity(2, 2)));
  }
  const Corpus c(default_schema(1), records);
  const auto report = cv_evaluate(c, default_methods(c.schema()), EvalOptions{});
  CHECK(report.row("proxy_1").proxy_score == 1.0);
  CHECK(report.row("adaptive_composite").proxy_score == 1.0);
}

TEST_CASE("cv_evaluate: determinism, permutation invariance, bounds") {
  const auto c = synthetic(120, 4);
  EvalOptions options;
  options.seed = 77;
  const auto methods = default_methods(c.schema());
  const auto a = cv_evaluate(c, methods, options);
  check_same(a, cv_evaluate(c, methods, options));

  auto records = c.records();
  std::reverse(records.begin(), records.end());
  std::swap(records[3], records[50]);
  check_same(a, cv_evaluate(Corpus(c.schema(), records), methods, options));

  for (const auto& row : a.rows) {
    CHECK(row.table.total() == 120);
    CHECK(row.sensitivity >= 0.0);
    CHECK(row.sensitivity <= 1.0);
    CHECK(row.proxy_score >= -1.0);
    CHECK(row.proxy_score <= 1.0);
    CHECK(std::abs(row.proxy_quality) <= 1.0);
    CHECK(row.proxy_score * row.table.long_term_significant() <= row.sensitivity * row.table.total() + 1e-9);
  }
  CHECK_THROWS_AS(a.row("nope"), ValidationError);
}

TEST_CASE("cv_evaluate rejects bad options") {
  const auto c = synthetic(20, 1);
  EvalOptions options;
  options.k = 1;
  CHECK_THROWS_AS(cv_evaluate(c, default_methods(c.schema()), options), ValidationError);
  CHECK_THROWS_AS(cv_evaluate(c, {}, EvalOptions{}), ValidationError);
}

TEST_CASE("fold fits only see training records") {
  const auto c = synthetic(80, 9);
  EvalOptions options;
  options.seed = 3;
  const auto folds = stratified_kfold(c, 4, options.seed);
  const auto base = fit_training_fold(folds[1].train, options, 1);

  // perturb the proxy measurements of a test record; the long-term value is untouched
  auto records = c.records();
  const auto& victim = folds[1].test[0].id;
  for (auto& r : records)
    if (r.id == victim) r.delta_hat.tail(2) *= -10.0;
  const auto mutated = stratified_kfold(Corpus(c.schema(), records), 4, options.seed);
  const auto again = fit_training_fold(mutated[1].train, options, 1);
  CHECK(again.latent.lambda == base.latent.lambda);
  CHECK(again.noise.xi_ref == base.noise.xi_ref);
}

TEST_CASE("eval CSV and table output") {
  EvalReport report;
  report.rows.push_back(MethodResult{"adaptive_composite", 0.5, 0.25, 0.125, {}});
  std::ostringstream csv, table;
  write_eval_csv(report, csv);
  CHECK(csv.str().rfind("method,sensitivity,proxy_score,proxy_quality\n", 0) == 0);
  CHECK(csv.str().find("adaptive_composite,0.5,0.25,0.125") != std::string::npos);
  print_eval_table(report, table);
  CHECK(table.str().find("adaptive_composite") != std::string::npos);
}
