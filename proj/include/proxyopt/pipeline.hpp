#pragma once

#include "proxyopt/corpus.hpp"
#include "proxyopt/denoise.hpp"
#include "proxyopt/noisescale.hpp"
#include "proxyopt/portfolio.hpp"

#include <filesystem>
#include <optional>

namespace proxyopt {

struct PipelineConfig {
  std::filesystem::path corpus_path;
  std::optional<std::filesystem::path> pending_path;
  FitConfig inference;
  /// Derived from the corpus raw moments when absent.
  std::optional<PriorSpec> prior;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  /// Sample sizes for sweep.csv; no sweep is written when empty.
  std::vector<std::int64_t> n_grid;
};

struct PendingWeights {
  std::string id;
  std::int64_t n = 0;
  ProxyWeights weights;
  bool explicit_xi = false;
  /// w^T delta_hat_p when the experiment supplies proxy measurements.
  std::optional<double> composite_value;
};

struct PipelineResult {
  LatentParams latent;
  NoiseModel noise;
  std::vector<PendingWeights> pending;
  std::vector<std::string> warnings;
};

struct SweepRow {
  std::int64_t n = 0;
  ProxyWeights weights;
};

/// Weights for one new experiment: its own xi_hat_pp when given, otherwise xi_ref / n.
PendingWeights weights_for(const LatentParams& latent, const NoiseModel& model, const PendingExperiment& pending);

/// One row per distinct n in ascending order.
std::vector<SweepRow> sweep_weights(const LatentParams& latent, const NoiseModel& model,
                                    std::vector<std::int64_t> n_grid);

void write_sweep_csv(const std::vector<SweepRow>& rows, const MetricSchema& schema, std::ostream& out);

/// Fit the hierarchical model and xi_ref on the corpus, then weight every
/// pending experiment. Writes latent.json, noise.json, diagnostics.json and,
/// when requested, weights.json and sweep.csv into output_dir. Errors are
/// rethrown with the stage name prefixed.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace proxyopt
