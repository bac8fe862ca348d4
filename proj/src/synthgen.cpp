#include "proxyopt/synthgen.hpp"

#include "proxyopt/errors.hpp"

namespace proxyopt {

MetricSchema default_schema(std::size_t num_proxies) {
  MetricSchema s{"north_star", {}};
  for (std::size_t j = 1; j <= num_proxies; ++j) s.proxy_names.push_back("proxy_" + std::to_string(j));
  return s;
}

void GenSpec::validate() const {
  const auto p = mu.size();
  if (p < 2) throw ValidationError("generator needs at least one proxy (mu of length >= 2)");
  if (lambda.rows() != p || lambda.cols() != p) throw ValidationError("lambda dimension mismatch");
  if (!is_symmetric(lambda) || !is_psd(lambda)) throw ValidationError("lambda must be symmetric PSD");
  if (num_records < 1) throw ValidationError("generator needs K >= 1");
  if (schema && schema->dim() != static_cast<std::size_t>(p))
    throw ValidationError("schema dimension does not match mu");
  std::visit(
      [&](const auto& noise_spec) {
        using T = std::decay_t<decltype(noise_spec)>;
        if constexpr (std::is_same_v<T, ExplicitNoise>) {
          if (noise_spec.xi.size() != num_records)
            throw ValidationError("explicit noise list must have K entries");
          for (const auto& xi : noise_spec.xi) {
            if (xi.rows() != p || xi.cols() != p) throw ValidationError("xi dimension mismatch");
            if (!is_symmetric(xi) || !is_psd(xi)) throw ValidationError("xi must be symmetric PSD");
          }
        } else {
          if (noise_spec.xi_ref.rows() != p || noise_spec.xi_ref.cols() != p)
            throw ValidationError("xi_ref dimension mismatch");
          if (!is_symmetric(noise_spec.xi_ref) || !is_psd(noise_spec.xi_ref))
            throw ValidationError("xi_ref must be symmetric PSD");
          if (noise_spec.sizes.size() != num_records)
            throw ValidationError("sizes must have K entries");
          for (auto n : noise_spec.sizes)
            if (n < 1) throw ValidationError("sizes must be >= 1");
        }
      },
      noise);
}

Matrix GenSpec::xi_for(std::size_t i) const {
  if (const auto* e = std::get_if<ExplicitNoise>(&noise)) return e->xi.at(i);
  const auto& s = std::get<ScaledNoise>(noise);
  return s.xi_ref / static_cast<double>(s.sizes.at(i));
}

std::int64_t GenSpec::n_for(std::size_t i) const {
  if (const auto* s = std::get_if<ScaledNoise>(&noise)) return s->sizes.at(i);
  return 1;
}

Vector sample_mvn_factored(const Vector& mean, const Matrix& factor, Rng& rng) {
  Vector z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = standard_normal(rng);
  return mean + factor * z;
}

Vector sample_mvn(const Vector& mean, const Matrix& cov, Rng& rng) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw ValidationError("sample_mvn: covariance dimension mismatch");
  return sample_mvn_factored(mean, psd_factor(cov), rng);
}

GeneratedCorpus generate(const GenSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, "synthgen");
  const Matrix lambda_factor = psd_factor(spec.lambda);
  // Factor cache: scaled and homoscedastic corpora reuse one factor.
  const bool scaled = std::holds_alternative<ScaledNoise>(spec.noise);
  const Matrix ref_factor = scaled ? psd_factor(std::get<ScaledNoise>(spec.noise).xi_ref) : Matrix();

  std::vector<ExperimentRecord> records;
  std::vector<Vector> latent;
  records.reserve(spec.num_records);
  latent.reserve(spec.num_records);
  for (std::size_t i = 0; i < spec.num_records; ++i) {
    Vector truth = sample_mvn_factored(spec.mu, lambda_factor, rng);
    const Matrix xi = spec.xi_for(i);
    const Matrix noise_factor =
        scaled ? Matrix(ref_factor / std::sqrt(static_cast<double>(spec.n_for(i)))) : psd_factor(xi);
    ExperimentRecord rec;
    rec.id = "exp_" + std::to_string(i);
    rec.n = spec.n_for(i);
    rec.delta_hat = sample_mvn_factored(truth, noise_factor, rng);
    rec.xi_hat = symmetrize(xi);
    records.push_back(std::move(rec));
    latent.push_back(std::move(truth));
  }
  MetricSchema schema =
      spec.schema ? *spec.schema : default_schema(static_cast<std::size_t>(spec.mu.size() - 1));
  return {Corpus(std::move(schema), std::move(records)), std::move(latent)};
}

SplitSample generate_split(const Vector& mu, const Matrix& lambda, const Matrix& xi_split,
                           std::size_t num_records, std::uint64_t seed) {
  if (num_records < 1) throw ValidationError("generate_split needs at least one record");
  Rng rng = make_rng(seed, "synthgen/split");
  const Matrix lf = psd_factor(lambda);
  const Matrix nf = psd_factor(xi_split);
  SplitSample out{{}, Corpus(default_schema(static_cast<std::size_t>(mu.size() - 1)), {}), {}};
  std::vector<ExperimentRecord> records;
  for (std::size_t i = 0; i < num_records; ++i) {
    Vector truth = sample_mvn_factored(mu, lf, rng);
    Vector a = sample_mvn_factored(truth, nf, rng);
    Vector b = sample_mvn_factored(truth, nf, rng);
    ExperimentRecord rec;
    rec.id = "exp_" + std::to_string(i);
    rec.n = 2;
    rec.delta_hat = 0.5 * (a + b);
    rec.xi_hat = symmetrize(0.5 * xi_split);
    records.push_back(std::move(rec));
    out.pairs.emplace_back(std::move(a), std::move(b));
    out.latent_truth.push_back(std::move(truth));
  }
  out.pooled = Corpus(out.pooled.schema(), std::move(records));
  return out;
}

}  // namespace proxyopt
