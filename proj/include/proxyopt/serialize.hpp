#pragma once

#include "proxyopt/denoise.hpp"
#include "proxyopt/noisescale.hpp"
#include "proxyopt/portfolio.hpp"
#include "proxyopt/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>

// JSON shapes of the artifacts written by the command-line tool.
namespace proxyopt::io {

using nlohmann::json;

json to_json(const LatentParams& latent);
LatentParams latent_from_json(const json& j);

json to_json(const NoiseModel& model);
NoiseModel noise_from_json(const json& j);

json to_json(const ProxyWeights& weights, const MetricSchema& schema, std::optional<std::int64_t> n);

json map_diagnostics(const MapResult& result);
json mcmc_diagnostics(const McmcResult& result);

/// {"mu", "lambda_lower", "K", "seed", "noise": {"xi_ref_lower", "sizes"} | {"xi_lower": [[...], ...]},
///  optional "long_term"/"proxies"}.
GenSpec genspec_from_json(const json& j);

json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace proxyopt::io
