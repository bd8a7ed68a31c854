#include "amortlab/baselines/baselines.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "amortlab/error.hpp"
#include "amortlab/io.hpp"

namespace amortlab {

Eigen::VectorXd ols_fit(const Task& task) {
  require(task.n_obs() >= 1, "ols: empty task");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(task.inputs);
  return cod.solve(task.outputs);
}

double log_sum_exp(const Eigen::VectorXd& v) {
  require(v.size() >= 1, "log_sum_exp of an empty vector");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd bayes_weights_clustered(const Task& task, const ClusteredPriorSpec& spec) {
  spec.validate();
  if (task.dim() != spec.p || task.inputs.cols() != spec.p)
    throw DimensionError("clustered oracle: task dimension mismatch");
  const Eigen::Index K = spec.centroids.rows();
  Eigen::VectorXd logw(K);
  const double inv2s2 = 1.0 / (2.0 * spec.sigma_noise * spec.sigma_noise);
  for (Eigen::Index k = 0; k < K; ++k)
    logw(k) = -(task.outputs - task.inputs * spec.centroids.row(k).transpose()).squaredNorm() * inv2s2;
  return (logw.array() - log_sum_exp(logw)).exp();
}

Eigen::VectorXd bayes_posterior_mean_clustered(const Task& task, const ClusteredPriorSpec& spec) {
  const Eigen::VectorXd w = bayes_weights_clustered(task, spec);
  return spec.centroids.transpose() * w;
}

// ---------------------------------------------------------------------------------------------

void GaussianMixture::validate() const {
  require(weights.size() >= 1, "mixture: no components");
  require(static_cast<std::size_t>(weights.size()) == means.size() && means.size() == covariances.size(),
          "mixture: component vectors differ in length");
  require((weights.array() >= 0.0).all(), "mixture: negative weight");
  require(std::abs(weights.sum() - 1.0) <= 1e-12, "mixture: weights do not sum to 1");
  for (const auto& c : covariances) {
    require(std::abs(c(0, 1) - c(1, 0)) <= 1e-12, "mixture: covariance not symmetric");
    require(c.llt().info() == Eigen::Success && c(0, 0) > 0.0 && c.determinant() > 0.0,
            "mixture: covariance not positive-definite");
  }
}

double GaussianMixture::log_density(const Eigen::Vector2d& x) const {
  Eigen::VectorXd terms(weights.size());
  for (std::size_t k = 0; k < size(); ++k) {
    const Eigen::Matrix2d& c = covariances[k];
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    const Eigen::Vector2d d = x - means[k];
    const Eigen::Matrix2d inv = (Eigen::Matrix2d() << c(1, 1), -c(0, 1), -c(1, 0), c(0, 0)).finished() / det;
    const double quad = d.dot(inv * d);
    const auto i = static_cast<Eigen::Index>(k);
    terms(i) = weights(i) > 0.0
                   ? std::log(weights(i)) - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad
                   : -std::numeric_limits<double>::infinity();
  }
  return log_sum_exp(terms);
}

double GaussianMixture::density(const Eigen::Vector2d& x) const { return std::exp(log_density(x)); }

Eigen::Vector2d GaussianMixture::mean() const {
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  for (std::size_t k = 0; k < size(); ++k) m += weights(static_cast<Eigen::Index>(k)) * means[k];
  return m;
}

std::string GaussianMixture::to_text() const {
  std::ostringstream out;
  out << size() << '\n';
  for (std::size_t k = 0; k < size(); ++k) {
    const auto& c = covariances[k];
    out << io::format_double(weights(static_cast<Eigen::Index>(k))) << ' '
        << io::format_double(means[k](0)) << ' ' << io::format_double(means[k](1)) << ' '
        << io::format_double(c(0, 0)) << ' ' << io::format_double(c(0, 1)) << ' '
        << io::format_double(c(1, 0)) << ' ' << io::format_double(c(1, 1)) << '\n';
  }
  return out.str();
}

GaussianMixture GaussianMixture::from_text(const std::string& text) {
  std::istringstream in(text);
  std::size_t K = 0;
  if (!(in >> K) || K == 0) throw ValidationError("mixture text: bad component count");
  GaussianMixture mix;
  mix.weights.resize(static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    std::string f[7];
    for (auto& s : f)
      if (!(in >> s)) throw ValidationError("mixture text: truncated component");
    mix.weights(static_cast<Eigen::Index>(k)) = io::parse_double(f[0]);
    mix.means.emplace_back(io::parse_double(f[1]), io::parse_double(f[2]));
    Eigen::Matrix2d c;
    c << io::parse_double(f[3]), io::parse_double(f[4]), io::parse_double(f[5]), io::parse_double(f[6]);
    mix.covariances.push_back(c);
  }
  mix.validate();
  return mix;
}

void GaussianMixture::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text();
}

GaussianMixture ring_prior(const RingPriorSpec& spec) {
  spec.validate();
  GaussianMixture mix;
  mix.weights = Eigen::VectorXd::Constant(spec.K, 1.0 / spec.K);
  mix.means = ring_means(spec);
  const double var = spec.component_sd * spec.component_sd;
  mix.covariances.assign(static_cast<std::size_t>(spec.K), var * Eigen::Matrix2d::Identity());
  return mix;
}

GaussianMixture exact_ring_posterior(const Task& task, const RingPriorSpec& spec) {
  GaussianMixture prior = ring_prior(spec);
  if (task.n_obs() == 0) return prior;
  if (task.inputs.cols() != 2) throw DimensionError("ring posterior: inputs must have 2 columns");
  const double s2 = spec.component_sd * spec.component_sd;
  const double e2 = spec.obs_noise_sd * spec.obs_noise_sd;
  const Eigen::Matrix2d xtx = task.inputs.transpose() * task.inputs;
  const Eigen::Vector2d xty = task.inputs.transpose() * task.outputs;
  const Eigen::Matrix2d precision = Eigen::Matrix2d::Identity() / s2 + xtx / e2;
  Eigen::Matrix2d cov = precision.inverse();
  cov = 0.5 * (cov + cov.transpose()).eval();
  // y ~ N(X mu_k, s2 X X' + e2 I). By Woodbury the quadratic form only needs the 2x2
  // matrix M = (e2/s2) I + X'X; the log-determinant is shared by every component.
  const Eigen::Matrix2d m = (e2 / s2) * Eigen::Matrix2d::Identity() + xtx;
  const Eigen::LLT<Eigen::Matrix2d> m_llt(m);
  Eigen::VectorXd logw(spec.K);
  GaussianMixture post;
  for (int k = 0; k < spec.K; ++k) {
    const Eigen::Vector2d& mu = prior.means[static_cast<std::size_t>(k)];
    const Eigen::VectorXd r = task.outputs - task.inputs * mu;
    const Eigen::Vector2d xtr = task.inputs.transpose() * r;
    const double quad = (r.squaredNorm() - xtr.dot(m_llt.solve(xtr))) / e2;
    logw(k) = std::log(prior.weights(k)) - 0.5 * quad;
    post.means.push_back(cov * (mu / s2 + xty / e2));
    post.covariances.push_back(cov);
  }
  post.weights = (logw.array() - log_sum_exp(logw)).exp();
  post.weights /= post.weights.sum();
  return post;
}

std::function<double(const Eigen::Vector2d&)> ring_log_posterior(const Task& task,
                                                                const RingPriorSpec& spec) {
  if (task.n_obs() > 0 && task.inputs.cols() != 2)
    throw DimensionError("ring posterior: inputs must have 2 columns");
  const double inv_2e2 = 0.5 / (spec.obs_noise_sd * spec.obs_noise_sd);
  return [prior = ring_prior(spec), x = task.inputs, y = task.outputs,
          inv_2e2](const Eigen::Vector2d& beta) {
    double lp = prior.log_density(beta);
    if (x.rows() > 0) lp -= inv_2e2 * (y - x * beta).squaredNorm();
    return lp;
  };
}

Eigen::MatrixXd sample_mixture(const GaussianMixture& mix, std::size_t n, std::uint64_t seed) {
  mix.validate();
  Rng rng(seed);
  std::discrete_distribution<std::size_t> pick(mix.weights.data(), mix.weights.data() + mix.weights.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Matrix2d> chol;
  for (const auto& c : mix.covariances) chol.push_back(c.llt().matrixL());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng);
    Eigen::Vector2d z;
    z(0) = normal(rng);
    z(1) = normal(rng);
    out.row(static_cast<Eigen::Index>(i)) = (mix.means[k] + chol[k] * z).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

void McmcConfig::validate() const {
  require(n_steps >= 1, "mcmc: n_steps must be >= 1");
  require(burn_in >= 0 && burn_in < n_steps, "mcmc: burn_in must lie in [0, n_steps)");
  require(proposal_sd >= 0.0 && std::isfinite(proposal_sd), "mcmc: proposal_sd must be >= 0");
  require(init.allFinite(), "mcmc: init must be finite");
}

McmcResult rw_metropolis(const std::function<double(const Eigen::Vector2d&)>& log_density,
                         const McmcConfig& cfg) {
  cfg.validate();
  Eigen::Vector2d state = cfg.init;
  double lp = log_density(state);
  require(std::isfinite(lp), "mcmc: log density is not finite at the initial state");
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  McmcResult res;
  res.samples.resize(cfg.n_steps - cfg.burn_in, 2);
  long accepted = 0;
  for (int step = 0; step < cfg.n_steps; ++step) {
    Eigen::Vector2d proposal = state;
    proposal(0) += cfg.proposal_sd * normal(rng);
    proposal(1) += cfg.proposal_sd * normal(rng);
    const double lp_new = log_density(proposal);
    if (std::log(uniform(rng)) < lp_new - lp) {
      state = proposal;
      lp = lp_new;
      ++accepted;
    }
    if (step >= cfg.burn_in) res.samples.row(step - cfg.burn_in) = state.transpose();
  }
  res.acceptance_rate = static_cast<double>(accepted) / cfg.n_steps;
  return res;
}

}  // namespace amortlab
