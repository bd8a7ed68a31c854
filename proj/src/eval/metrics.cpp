#include "amortlab/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "amortlab/error.hpp"
#include "amortlab/io.hpp"

namespace amortlab {

double mse_beta(std::span<const Eigen::VectorXd> estimates, std::span<const Eigen::VectorXd> truths) {
  require(estimates.size() == truths.size(), "mse_beta: estimate and truth counts differ");
  require(!estimates.empty(), "mse_beta: no pairs");
  double total = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].size() != truths[i].size()) throw ValidationError("mse_beta: dimension mismatch");
    total += (estimates[i] - truths[i]).squaredNorm();
  }
  return total / static_cast<double>(estimates.size());
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b, bool* degenerate) {
  if (a.size() != b.size()) throw DimensionError("cosine: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  const bool zero = na == 0.0 || nb == 0.0;
  if (degenerate) *degenerate = zero;
  if (zero) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

BootstrapReport bootstrap_stability(const TaskEstimator& estimator, const Eigen::VectorXd& beta_true,
                                    int n_obs, int n_replicates, const NoiseRegime& regime,
                                    std::uint64_t seed) {
  require(n_replicates >= 2, "bootstrap needs at least two replicates");
  require(n_obs >= 1, "bootstrap needs n_obs >= 1");
  const Eigen::Index p = beta_true.size();
  Eigen::MatrixXd est(n_replicates, p);
  for (int b = 0; b < n_replicates; ++b) {
    const Task t = simulate_linear_task(beta_true, n_obs, regime,
                                        derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(b)));
    const Eigen::VectorXd e = estimator(t);
    if (e.size() != p) throw DimensionError("bootstrap: estimator output width mismatch");
    est.row(b) = e.transpose();
  }
  BootstrapReport r;
  r.n_obs = n_obs;
  r.n_replicates = n_replicates;
  r.regime_tag = regime.tag();
  const Eigen::RowVectorXd mean = est.colwise().mean();
  r.per_coef_sd = ((est.rowwise() - mean).array().square().colwise().sum() /
                   static_cast<double>(n_replicates - 1))
                      .sqrt()
                      .transpose();
  r.sigma_boot = r.per_coef_sd.mean();
  return r;
}

namespace {

double mean_pair_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double ax = a(i, 0), ay = a(i, 1);
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double dx = ax - b(j, 0), dy = ay - b(j, 1);
      row += std::sqrt(dx * dx + dy * dy);
    }
    total += row;
  }
  return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() >= 2 && b.rows() >= 2, "energy distance needs at least two samples per side");
  if (a.cols() != 2 || b.cols() != 2) throw DimensionError("energy distance expects n x 2 samples");
  const double cross = mean_pair_distance(a, b);
  const double within = 0.5 * (mean_pair_distance(a, a) + mean_pair_distance(b, b));
  return std::max(0.0, cross - within);
}

double energy_null_quantile(const GaussianMixture& mix, std::size_t n_a, std::size_t n_b,
                            int n_resamples, double q, std::uint64_t seed) {
  require(n_resamples >= 1, "energy null needs at least one resample");
  require(q >= 0.0 && q <= 1.0, "quantile must lie in [0, 1]");
  std::vector<double> stats;
  for (int r = 0; r < n_resamples; ++r) {
    const auto i = static_cast<std::uint64_t>(r);
    stats.push_back(energy_distance(sample_mixture(mix, n_a, derive_seed(seed, "null_a", i)),
                                    sample_mixture(mix, n_b, derive_seed(seed, "null_b", i))));
  }
  std::sort(stats.begin(), stats.end());
  // Type-7 (linear interpolation) quantile.
  const double h = q * static_cast<double>(stats.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, stats.size() - 1);
  return stats[lo] + (h - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
}

Eigen::VectorXd mode_coverage(const Eigen::MatrixXd& samples, const GaussianMixture& mix) {
  require(samples.rows() >= 1, "mode coverage needs at least one sample");
  if (samples.cols() != 2) throw DimensionError("mode coverage expects n x 2 samples");
  Eigen::VectorXd shares = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mix.size()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Eigen::Vector2d s = samples.row(i).transpose();
    std::size_t best = 0;
    double best_d = (s - mix.means[0]).squaredNorm();
    for (std::size_t k = 1; k < mix.size(); ++k) {
      const double d = (s - mix.means[k]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    shares(static_cast<Eigen::Index>(best)) += 1.0;
  }
  return shares / static_cast<double>(samples.rows());
}

void append_metric_records(const std::filesystem::path& path, std::span<const MetricRecord> records) {
  static const std::vector<std::string> header{"experiment", "model_tag", "checkpoint", "metric_name",
                                               "value",      "n_tasks",   "seed"};
  io::CsvWriter out(path, header, /*append=*/true);
  for (const auto& r : records) {
    if (!std::isfinite(r.value)) throw ValidationError("metric '" + r.metric_name + "' is not finite");
    out.field(r.experiment).field(r.model_tag).field(r.checkpoint).field(r.metric_name);
    out.field(r.value).field(r.n_tasks).field(std::to_string(r.seed));
    out.end_row();
  }
}

}  // namespace amortlab
