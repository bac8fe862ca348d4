#include "proxyopt/serialize.hpp"

#include "proxyopt/errors.hpp"

#include <fstream>

namespace proxyopt::io {

namespace {

std::vector<double> numbers(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) throw ValidationError(std::string("missing array '") + key + "'");
  std::vector<double> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number()) throw ValidationError(std::string("array '") + key + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

json to_json(const LatentParams& latent) {
  return json{{"mu", to_std(latent.mu)}, {"lambda_lower", pack_lower(latent.lambda)}};
}

LatentParams latent_from_json(const json& j) {
  const auto mu = numbers(j, "mu");
  LatentParams out{to_vector(mu), unpack_lower(numbers(j, "lambda_lower"), mu.size())};
  out.validate();
  return out;
}

json to_json(const NoiseModel& model) {
  return json{{"xi_ref_lower", pack_lower(model.xi_ref)}, {"source_count", model.source_count}};
}

NoiseModel noise_from_json(const json& j) {
  const auto lower = numbers(j, "xi_ref_lower");
  NoiseModel out{unpack_lower(lower, dim_from_lower_size(lower.size())), 0};
  if (!j.contains("source_count") || !j.at("source_count").is_number_integer())
    throw ValidationError("noise model needs an integer 'source_count'");
  out.source_count = j.at("source_count").get<std::size_t>();
  out.validate();
  return out;
}

json to_json(const ProxyWeights& weights, const MetricSchema& schema, std::optional<std::int64_t> n) {
  json w = json::object();
  for (std::size_t j = 0; j < schema.num_proxies(); ++j)
    w[schema.proxy_names[j]] = weights.w(static_cast<Eigen::Index>(j));
  json out{{"weights", w}, {"rho", weights.rho}};
  out["n"] = n ? json(*n) : json(nullptr);
  return out;
}

json map_diagnostics(const MapResult& result) {
  return json{{"method", "map"},
              {"iterations", result.iterations},
              {"grad_norm", result.grad_norm},
              {"log_posterior", result.log_posterior},
              {"warnings", result.warnings}};
}

json mcmc_diagnostics(const McmcResult& result) {
  json params = json::array();
  for (const auto& d : result.diagnostics)
    params.push_back({{"name", d.name}, {"mean", d.mean}, {"sd", d.sd}, {"rhat", d.rhat}, {"ess", d.ess}});
  return json{{"method", "mcmc"},
              {"chains", result.chains},
              {"draws_per_chain", result.draws_per_chain},
              {"converged", result.converged},
              {"acceptance_rate", result.acceptance_rate},
              {"divergences", result.divergences},
              {"parameters", params},
              {"warnings", result.warnings}};
}

GenSpec genspec_from_json(const json& j) {
  GenSpec spec;
  const auto mu = numbers(j, "mu");
  spec.mu = to_vector(mu);
  spec.lambda = unpack_lower(numbers(j, "lambda_lower"), mu.size());
  if (!j.contains("K") || !j.at("K").is_number_integer() || j.at("K").get<std::int64_t>() < 1)
    throw ValidationError("generator spec needs a positive integer 'K'");
  spec.num_records = j.at("K").get<std::size_t>();
  spec.seed = j.value("seed", std::uint64_t{0});
  if (!j.contains("noise") || !j.at("noise").is_object()) throw ValidationError("generator spec needs a 'noise' object");
  const auto& noise = j.at("noise");
  if (noise.contains("xi_ref_lower")) {
    ScaledNoise s{unpack_lower(numbers(noise, "xi_ref_lower"), mu.size()), {}};
    if (!noise.contains("sizes") || !noise.at("sizes").is_array()) throw ValidationError("scaled noise needs 'sizes'");
    for (const auto& n : noise.at("sizes")) {
      if (!n.is_number_integer()) throw ValidationError("'sizes' must hold integers");
      s.sizes.push_back(n.get<std::int64_t>());
    }
    spec.noise = std::move(s);
  } else if (noise.contains("xi_lower")) {
    ExplicitNoise e;
    for (const auto& entry : noise.at("xi_lower")) {
      std::vector<double> lower;
      for (const auto& v : entry) lower.push_back(v.get<double>());
      e.xi.push_back(unpack_lower(lower, mu.size()));
    }
    spec.noise = std::move(e);
  } else {
    throw ValidationError("noise must contain 'xi_ref_lower' + 'sizes' or 'xi_lower'");
  }
  if (j.contains("proxies")) {
    MetricSchema s{j.value("long_term", std::string("north_star")), {}};
    for (const auto& p : j.at("proxies")) s.proxy_names.push_back(p.get<std::string>());
    spec.schema = std::move(s);
  }
  spec.validate();
  return spec;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "': " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace proxyopt::io
