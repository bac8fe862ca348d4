#include "proxyopt/pipeline.hpp"

#include "proxyopt/errors.hpp"
#include "proxyopt/random.hpp"
#include "proxyopt/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>

namespace proxyopt {

PendingWeights weights_for(const LatentParams& latent, const NoiseModel& model, const PendingExperiment& pending) {
  PendingWeights out;
  out.id = pending.id;
  out.n = pending.n;
  out.explicit_xi = pending.xi_hat_pp.has_value();
  const Matrix xi_pp = pending.xi_hat_pp ? *pending.xi_hat_pp : predict_xi_pp(model, pending.n);
  out.weights = optimize_weights(latent, xi_pp);
  if (pending.delta_hat_p) out.composite_value = out.weights.w.dot(*pending.delta_hat_p);
  return out;
}

std::vector<SweepRow> sweep_weights(const LatentParams& latent, const NoiseModel& model,
                                    std::vector<std::int64_t> n_grid) {
  if (n_grid.empty()) throw ValidationError("sweep needs at least one sample size");
  std::sort(n_grid.begin(), n_grid.end());
  n_grid.erase(std::unique(n_grid.begin(), n_grid.end()), n_grid.end());
  std::vector<SweepRow> rows;
  for (auto n : n_grid) rows.push_back({n, optimize_weights(latent, predict_xi_pp(model, n))});
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const MetricSchema& schema, std::ostream& out) {
  out << "n";
  for (const auto& name : schema.proxy_names) out << ",w_" << name;
  out << ",rho\n" << std::setprecision(17);
  for (const auto& row : rows) {
    out << row.n;
    for (Eigen::Index j = 0; j < row.weights.w.size(); ++j) out << ',' << row.weights.w(j);
    out << ',' << row.weights.rho << '\n';
  }
}

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(name) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
  namespace fs = std::filesystem;
  const Corpus corpus = stage("load corpus", [&] { return load_corpus(config.corpus_path); });
  std::optional<PendingSet> pending;
  if (config.pending_path) {
    pending = stage("load pending", [&] { return load_pending(*config.pending_path); });
    if (pending->schema != corpus.schema())
      throw ValidationError("load pending: pending schema does not match the corpus schema");
  }
  stage("output", [&] {
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw ValidationError("cannot create output directory '" + config.output_dir.string() + "'");
    return 0;
  });

  PipelineResult result;
  FitConfig fit = config.inference;
  fit.seed = derive_seed(config.seed, "fit");
  const PriorSpec prior = config.prior ? *config.prior : PriorSpec::from_corpus(corpus);
  io::json diagnostics;
  stage("fit latent model", [&] {
    if (fit.method == FitMethod::Mcmc) {
      const McmcResult r = fit_mcmc(corpus, prior, fit);
      result.latent = r.posterior_mean;
      result.warnings.insert(result.warnings.end(), r.warnings.begin(), r.warnings.end());
      diagnostics = io::mcmc_diagnostics(r);
    } else {
      const MapResult r = fit_map(corpus, prior, fit);
      result.latent = r.params;
      result.warnings.insert(result.warnings.end(), r.warnings.begin(), r.warnings.end());
      diagnostics = io::map_diagnostics(r);
    }
    return 0;
  });
  result.noise = stage("fit noise model", [&] { return estimate_xi_ref(corpus); });

  if (pending) {
    stage("weights", [&] {
      for (const auto& p : pending->experiments) result.pending.push_back(weights_for(result.latent, result.noise, p));
      return 0;
    });
  }

  stage("write outputs", [&] {
    io::write_json_file(config.output_dir / "latent.json", io::to_json(result.latent));
    io::write_json_file(config.output_dir / "noise.json", io::to_json(result.noise));
    io::write_json_file(config.output_dir / "diagnostics.json", diagnostics);
    if (pending) {
      io::json arr = io::json::array();
      for (const auto& p : result.pending) {
        io::json j = io::to_json(p.weights, corpus.schema(), std::optional(p.n));
        j["id"] = p.id;
        if (p.composite_value) j["composite_value"] = *p.composite_value;
        arr.push_back(std::move(j));
      }
      io::write_json_file(config.output_dir / "weights.json", arr);
    }
    if (!config.n_grid.empty()) {
      const auto rows = sweep_weights(result.latent, result.noise, config.n_grid);
      std::ofstream out(config.output_dir / "sweep.csv", std::ios::binary);
      if (!out) throw ValidationError("cannot write sweep.csv");
      write_sweep_csv(rows, corpus.schema(), out);
    }
    return 0;
  });
  return result;
}

}  // namespace proxyopt
