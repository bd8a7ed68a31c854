#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amortlab/task_gen.hpp"

namespace amortlab {

/// Minimum-norm least squares (pseudoinverse semantics); handles n_obs < p.
Eigen::VectorXd ols_fit(const Task& task);

/// Posterior weights over the K centroids, w_k proportional to exp(-||y - X mu_k||^2 / (2 sigma^2)).
Eigen::VectorXd bayes_weights_clustered(const Task& task, const ClusteredPriorSpec& spec);
/// Posterior mean sum_k w_k mu_k, the Bayes estimator under squared loss.
Eigen::VectorXd bayes_posterior_mean_clustered(const Task& task, const ClusteredPriorSpec& spec);

/// log sum_i exp(v_i) without overflow.
double log_sum_exp(const Eigen::VectorXd& v);

struct GaussianMixture {
  Eigen::VectorXd weights;
  std::vector<Eigen::Vector2d> means;
  std::vector<Eigen::Matrix2d> covariances;

  std::size_t size() const { return means.size(); }
  void validate() const;
  double log_density(const Eigen::Vector2d& x) const;
  double density(const Eigen::Vector2d& x) const;
  Eigen::Vector2d mean() const;

  /// Plain text: "K", then per component "w m1 m2 c11 c12 c21 c22" (shortest round-trip decimals).
  std::string to_text() const;
  static GaussianMixture from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
};

GaussianMixture ring_prior(const RingPriorSpec& spec);

/// Conjugate posterior of the ring mixture prior under y = X beta + N(0, sigma_eps^2) noise.
GaussianMixture exact_ring_posterior(const Task& task, const RingPriorSpec& spec);

/// Unnormalized log posterior beta -> log p(beta) + log p(y | X, beta) for the ring model.
std::function<double(const Eigen::Vector2d&)> ring_log_posterior(const Task& task,
                                                                const RingPriorSpec& spec);

Eigen::MatrixXd sample_mixture(const GaussianMixture& mix, std::size_t n, std::uint64_t seed);

struct McmcConfig {
  int n_steps = 20000;
  int burn_in = 5000;
  double proposal_sd = 0.8;
  Eigen::Vector2d init = Eigen::Vector2d::Zero();
  std::uint64_t seed = 0;

  void validate() const;
};

struct McmcResult {
  Eigen::MatrixXd samples;  // (n_steps - burn_in) x 2
  double acceptance_rate = 0.0;
};

McmcResult rw_metropolis(const std::function<double(const Eigen::Vector2d&)>& log_density,
                         const McmcConfig& cfg);

}  // namespace amortlab
