#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amortlab/baselines/baselines.hpp"
#include "amortlab/task_gen.hpp"

namespace amortlab {

/// Mean over pairs of ||est - truth||^2.
double mse_beta(std::span<const Eigen::VectorXd> estimates, std::span<const Eigen::VectorXd> truths);

/// <a, b> / (|a| |b|). A zero vector on either side yields 0 and sets *degenerate.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                         bool* degenerate = nullptr);

struct BootstrapReport {
  int n_obs = 0;
  int n_replicates = 0;
  Eigen::VectorXd per_coef_sd;
  double sigma_boot = 0.0;
  std::string regime_tag;
};

using TaskEstimator = std::function<Eigen::VectorXd(const Task&)>;

/// Regenerates B datasets of size N from the fixed beta_true under the regime, runs the estimator
/// on each and reports the across-replicate sd (B - 1 denominator) of every coefficient.
BootstrapReport bootstrap_stability(const TaskEstimator& estimator, const Eigen::VectorXd& beta_true,
                                    int n_obs, int n_replicates, const NoiseRegime& regime,
                                    std::uint64_t seed);

/// E|X - Y| - (E|X - X'| + E|Y - Y'|) / 2 over all pairs (V-statistic).
double energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Quantile q of energy_distance between two independent exact draws of sizes (n_a, n_b).
double energy_null_quantile(const GaussianMixture& mix, std::size_t n_a, std::size_t n_b,
                            int n_resamples, double q, std::uint64_t seed);

/// Share of samples whose nearest component mean is component k.
Eigen::VectorXd mode_coverage(const Eigen::MatrixXd& samples, const GaussianMixture& mix);

struct MetricRecord {
  std::string experiment;
  std::string model_tag;
  std::string checkpoint;
  std::string metric_name;
  double value = 0.0;
  std::size_t n_tasks = 0;
  std::uint64_t seed = 0;
};

/// Appends rows (experiment, model_tag, checkpoint, metric_name, value, n_tasks, seed).
void append_metric_records(const std::filesystem::path& path, std::span<const MetricRecord> records);

}  // namespace amortlab
