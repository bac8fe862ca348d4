// proxyopt: composite proxy metrics from a corpus of historical A/B tests.
//
// Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include "proxyopt/corpus.hpp"
#include "proxyopt/denoise.hpp"
#include "proxyopt/errors.hpp"
#include "proxyopt/evalharness.hpp"
#include "proxyopt/noisescale.hpp"
#include "proxyopt/pipeline.hpp"
#include "proxyopt/random.hpp"
#include "proxyopt/serialize.hpp"
#include "proxyopt/synthgen.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace proxyopt;

namespace {

struct CommonOptions {
  std::string corpus;
  std::string pending;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::string method = "map";
  std::size_t k_folds = 4;
  std::string n_grid;
  int chains = 4;
  int warmup = 10000;
  int samples = 50000;
  std::string latent;
  std::string noise;
  std::string spec;
  std::vector<std::string> fixed_weights;
  bool equal_weights = false;
};

std::vector<std::int64_t> parse_grid(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ValidationError("--n-grid: '" + item + "' is not a number");
    }
    if (used != item.size() || !(v >= 1) || std::floor(v) != v || v > 9.0e18)
      throw ValidationError("--n-grid: '" + item + "' is not a positive integer");
    out.push_back(static_cast<std::int64_t>(v));
  }
  if (out.empty()) throw ValidationError("--n-grid is empty");
  return out;
}

FitConfig fit_config(const CommonOptions& o) {
  FitConfig fit;
  if (o.method == "map") {
    fit.method = FitMethod::Map;
  } else if (o.method == "mcmc") {
    fit.method = FitMethod::Mcmc;
  } else {
    throw ValidationError("--method must be 'map' or 'mcmc'");
  }
  fit.mcmc_chains = o.chains;
  fit.mcmc_warmup = o.warmup;
  fit.mcmc_samples = o.samples;
  fit.seed = derive_seed(o.seed, "fit");
  fit.validate();
  return fit;
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir + "'");
  return dir;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

void cmd_synth(const CommonOptions& o) {
  GenSpec spec = io::genspec_from_json(io::read_json_file(o.spec));
  if (o.seed != 0) spec.seed = o.seed;
  const auto generated = generate(spec);
  const fs::path out = ensure_dir(o.out);
  save_corpus(generated.corpus, out / "corpus.jsonl");
  std::cout << "wrote " << generated.corpus.size() << " records to " << (out / "corpus.jsonl").string() << '\n';
}

void cmd_fit(const CommonOptions& o) {
  const Corpus corpus = load_corpus(o.corpus);
  const FitConfig fit = fit_config(o);
  const PriorSpec prior = PriorSpec::from_corpus(corpus);
  const fs::path out = ensure_dir(o.out);
  if (fit.method == FitMethod::Mcmc) {
    const McmcResult r = fit_mcmc(corpus, prior, fit);
    print_warnings(r.warnings);
    io::write_json_file(out / "latent.json", io::to_json(r.posterior_mean));
    io::write_json_file(out / "diagnostics.json", io::mcmc_diagnostics(r));
  } else {
    const MapResult r = fit_map(corpus, prior, fit);
    print_warnings(r.warnings);
    io::write_json_file(out / "latent.json", io::to_json(r.params));
    io::write_json_file(out / "diagnostics.json", io::map_diagnostics(r));
  }
}

void cmd_noise(const CommonOptions& o) {
  const Corpus corpus = load_corpus(o.corpus);
  const NoiseModel model = estimate_xi_ref(corpus, o.equal_weights ? NoiseWeighting::Equal : NoiseWeighting::Precision);
  io::json j = io::to_json(model);
  if (corpus.size() >= 3) {
    io::json report = io::json::array();
    std::vector<std::string> names{corpus.schema().long_term_name};
    names.insert(names.end(), corpus.schema().proxy_names.begin(), corpus.schema().proxy_names.end());
    for (std::size_t m = 0; m < corpus.dim(); ++m) {
      try {
        const PowerLawFit fit = fit_power_law(corpus, m);
        report.push_back({{"metric", names[m]},
                          {"exponent", fit.exponent},
                          {"log_prefactor", fit.log_prefactor},
                          {"r_squared", fit.r_squared}});
      } catch (const ValidationError& e) {
        report.push_back({{"metric", names[m]}, {"error", e.what()}});
      }
    }
    j["power_law"] = report;
  }
  io::write_json_file(ensure_dir(o.out) / "noise.json", j);
}

void cmd_weights(const CommonOptions& o) {
  const LatentParams latent = io::latent_from_json(io::read_json_file(o.latent));
  const NoiseModel model = io::noise_from_json(io::read_json_file(o.noise));
  const PendingSet pending = load_pending(o.pending);
  if (pending.schema.dim() != latent.dim() || model.xi_ref.rows() != static_cast<Eigen::Index>(latent.dim()))
    throw ValidationError("pending schema, latent parameters and noise model disagree on dimension");
  io::json arr = io::json::array();
  for (const auto& p : pending.experiments) {
    const auto w = weights_for(latent, model, p);
    io::json j = io::to_json(w.weights, pending.schema, w.n);
    j["id"] = w.id;
    if (w.composite_value) j["composite_value"] = *w.composite_value;
    arr.push_back(std::move(j));
  }
  io::write_json_file(ensure_dir(o.out) / "weights.json", arr);
}

void cmd_sweep(const CommonOptions& o) {
  if (o.n_grid.empty()) throw ValidationError("sweep needs --n-grid");
  std::optional<Corpus> corpus;
  if (!o.corpus.empty()) corpus = load_corpus(o.corpus);
  LatentParams latent;
  NoiseModel model;
  if (!o.latent.empty() && !o.noise.empty()) {
    latent = io::latent_from_json(io::read_json_file(o.latent));
    model = io::noise_from_json(io::read_json_file(o.noise));
  } else if (corpus) {
    latent = fit_map(*corpus, PriorSpec::from_corpus(*corpus), fit_config(o)).params;
    model = estimate_xi_ref(*corpus);
  } else {
    throw ValidationError("sweep needs --latent and --noise, or --corpus");
  }
  const MetricSchema schema = corpus ? corpus->schema() : default_schema(latent.dim() - 1);
  if (schema.dim() != latent.dim()) throw ValidationError("corpus schema does not match the latent parameters");
  const auto rows = sweep_weights(latent, model, parse_grid(o.n_grid));
  std::ofstream out(ensure_dir(o.out) / "sweep.csv", std::ios::binary);
  if (!out) throw ValidationError("cannot write sweep.csv");
  write_sweep_csv(rows, schema, out);
}

void cmd_eval(const CommonOptions& o) {
  const Corpus corpus = load_corpus(o.corpus);
  auto methods = default_methods(corpus.schema());
  for (const auto& spec : o.fixed_weights) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ValidationError("--fixed-weights expects name=w1,w2,...");
    std::vector<double> w;
    std::stringstream ss(spec.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ',')) w.push_back(std::stod(item));
    methods.push_back(WeightingMethod::fixed(spec.substr(0, eq), to_vector(w)));
  }
  EvalOptions options;
  options.k = o.k_folds;
  options.seed = o.seed;
  options.fit = fit_config(o);
  options.noise_weighting = o.equal_weights ? NoiseWeighting::Equal : NoiseWeighting::Precision;
  const EvalReport report = cv_evaluate(corpus, methods, options);
  std::ofstream out(ensure_dir(o.out) / "eval.csv", std::ios::binary);
  if (!out) throw ValidationError("cannot write eval.csv");
  write_eval_csv(report, out);
  print_eval_table(report, std::cout);
}

void cmd_pipeline(const CommonOptions& o) {
  PipelineConfig config;
  config.corpus_path = o.corpus;
  if (!o.pending.empty()) config.pending_path = o.pending;
  config.inference = fit_config(o);
  config.output_dir = o.out;
  config.seed = o.seed;
  if (!o.n_grid.empty()) config.n_grid = parse_grid(o.n_grid);
  const PipelineResult r = run_pipeline(config);
  print_warnings(r.warnings);
  for (const auto& p : r.pending) {
    std::cout << p.id << " (n=" << p.n << "): rho=" << p.weights.rho << " w=[";
    for (Eigen::Index j = 0; j < p.weights.w.size(); ++j) std::cout << (j ? ", " : "") << p.weights.w(j);
    std::cout << "]";
    if (p.composite_value) std::cout << " composite=" << *p.composite_value;
    std::cout << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal composite proxy metrics for randomized experiments"};
  app.require_subcommand(1);
  CommonOptions o;

  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", o.out, "Output directory"); };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Random seed"); };
  auto add_fit = [&](CLI::App* sub) {
    sub->add_option("--method", o.method, "Inference method: map or mcmc")->check(CLI::IsMember({"map", "mcmc"}));
    sub->add_option("--chains", o.chains, "MCMC chains");
    sub->add_option("--warmup", o.warmup, "MCMC warmup iterations per chain");
    sub->add_option("--samples", o.samples, "MCMC draws per chain");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus from a generator spec");
  synth->add_option("--spec", o.spec, "Generator spec JSON")->required();
  add_out(synth);
  add_seed(synth);

  auto* fit = app.add_subcommand("fit", "Fit the hierarchical model to a corpus");
  fit->add_option("--corpus", o.corpus, "Corpus JSON-lines file")->required();
  add_out(fit);
  add_seed(fit);
  add_fit(fit);

  auto* noise = app.add_subcommand("noise", "Estimate xi_ref and the power-law diagnostic");
  noise->add_option("--corpus", o.corpus, "Corpus JSON-lines file")->required();
  noise->add_flag("--equal-weights", o.equal_weights, "Equal instead of precision weighting");
  add_out(noise);

  auto* weights = app.add_subcommand("weights", "Proxy weights for pending experiments");
  weights->add_option("--latent", o.latent, "latent.json")->required();
  weights->add_option("--noise", o.noise, "noise.json")->required();
  weights->add_option("--pending", o.pending, "Pending-experiment JSON-lines file")->required();
  add_out(weights);

  auto* sweep = app.add_subcommand("sweep", "Optimal weights across sample sizes");
  sweep->add_option("--latent", o.latent, "latent.json");
  sweep->add_option("--noise", o.noise, "noise.json");
  sweep->add_option("--corpus", o.corpus, "Corpus (fits when --latent/--noise are absent; supplies names)");
  sweep->add_option("--n-grid", o.n_grid, "Comma-separated sample sizes, e.g. 1e4,1e5,1e6")->required();
  add_out(sweep);
  add_seed(sweep);

  auto* eval = app.add_subcommand("eval", "Stratified cross-validated evaluation");
  eval->add_option("--corpus", o.corpus, "Corpus JSON-lines file")->required();
  eval->add_option("--k-folds", o.k_folds, "Number of folds")->check(CLI::PositiveNumber);
  eval->add_option("--fixed-weights", o.fixed_weights, "Extra fixed method: name=w1,w2,...");
  eval->add_flag("--equal-weights", o.equal_weights, "Equal instead of precision weighting for xi_ref");
  add_out(eval);
  add_seed(eval);
  add_fit(eval);

  auto* pipeline = app.add_subcommand("pipeline", "Fit, estimate noise, and weight pending experiments");
  pipeline->add_option("--corpus", o.corpus, "Corpus JSON-lines file")->required();
  pipeline->add_option("--pending", o.pending, "Pending-experiment JSON-lines file");
  pipeline->add_option("--n-grid", o.n_grid, "Also write sweep.csv for these sample sizes");
  add_out(pipeline);
  add_seed(pipeline);
  add_fit(pipeline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) cmd_synth(o);
    else if (*fit) cmd_fit(o);
    else if (*noise) cmd_noise(o);
    else if (*weights) cmd_weights(o);
    else if (*sweep) cmd_sweep(o);
    else if (*eval) cmd_eval(o);
    else if (*pipeline) cmd_pipeline(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
