#include "proxyopt/noisescale.hpp"

#include "proxyopt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace proxyopt {

void NoiseModel::validate() const {
  if (xi_ref.rows() < 2 || xi_ref.rows() != xi_ref.cols()) throw ValidationError("noise model dimension invalid");
  if (!xi_ref.allFinite() || !is_symmetric(xi_ref) || !is_psd(xi_ref))
    throw ValidationError("noise model xi_ref must be finite symmetric PSD");
  if (source_count < 1) throw ValidationError("noise model source_count must be >= 1");
}

NoiseModel estimate_xi_ref(const Corpus& corpus, NoiseWeighting weighting) {
  if (corpus.empty()) throw ValidationError("cannot estimate xi_ref from an empty corpus");
  // Sum in id order so the estimate does not depend on record order.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return corpus[a].id < corpus[b].id; });
  double total_n = 0;
  for (const auto& r : corpus.records()) total_n += static_cast<double>(r.n);
  const auto p = static_cast<Eigen::Index>(corpus.dim());
  Matrix acc = Matrix::Zero(p, p);
  const double k = static_cast<double>(corpus.size());
  for (auto i : order) {
    const auto& r = corpus[i];
    const double n = static_cast<double>(r.n);
    const double gamma = weighting == NoiseWeighting::Precision ? n / total_n : 1.0 / k;
    acc += (gamma * n) * r.xi_hat;
  }
  return {symmetrize(acc), corpus.size()};
}

Matrix predict_xi(const NoiseModel& model, std::int64_t n) {
  if (n < 1) throw ValidationError("predict_xi: sample size must be >= 1");
  return model.xi_ref / static_cast<double>(n);
}

Matrix predict_xi_pp(const NoiseModel& model, std::int64_t n) {
  const Matrix xi = predict_xi(model, n);
  const auto d = xi.rows() - 1;
  return xi.bottomRightCorner(d, d);
}

PowerLawFit fit_power_law(const Corpus& corpus, std::size_t metric_index) {
  if (corpus.size() < 3) throw ValidationError("fit_power_law needs at least 3 records");
  if (metric_index >= corpus.dim()) throw ValidationError("fit_power_law: metric index out of range");
  const auto m = static_cast<Eigen::Index>(metric_index);
  std::vector<double> xs, ys;
  for (const auto& r : corpus.records()) {
    const double v = r.xi_hat(m, m);
    if (!(v > 0)) throw ValidationError("fit_power_law: record '" + r.id + "' has a non-positive variance");
    xs.push_back(std::log(static_cast<double>(r.n)));
    ys.push_back(std::log(v));
  }
  const double k = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0)) throw ValidationError("fit_power_law: all records have the same sample size");
  PowerLawFit fit;
  fit.exponent = sxy / sxx;
  fit.log_prefactor = my - fit.exponent * mx;
  fit.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

}  // namespace proxyopt
