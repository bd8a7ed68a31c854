#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amortlab/rng.hpp"

namespace amortlab {

/// One regression problem y = X beta + noise.
struct Task {
  Eigen::MatrixXd inputs;   // n_obs x p
  Eigen::VectorXd outputs;  // n_obs
  Eigen::VectorXd beta_true;
  std::string regime_tag;
  std::uint64_t task_seed = 0;
  int sparsity_level = -1;  // percent of zero coefficients; -1 when not a sparse task

  Eigen::Index n_obs() const { return inputs.rows(); }
  Eigen::Index dim() const { return beta_true.size(); }
};

/// Row n is [x_n; y_n], the token a set estimator consumes.
Eigen::MatrixXd task_tokens(const Task& task);

/// Returns a copy of `task` with rows reordered by `order` (a permutation of 0..n_obs-1).
Task permute_rows(const Task& task, std::span<const Eigen::Index> order);

struct MetaDataset {
  std::vector<Task> tasks;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint64_t global_seed = 0;
  std::string spec_tag;

  std::span<const Task> train() const { return {tasks.data(), n_train}; }
  std::span<const Task> test() const { return {tasks.data() + n_train, n_test}; }
};

struct ClusteredPriorSpec {
  int p = 20;
  int K = 5;
  double tau = 3.0;
  double sigma_noise = 1.0;
  int n_obs_min = 10;
  int n_obs_max = 30;
  Eigen::MatrixXd centroids;  // K x p, fixed once sampled

  void validate() const;
};

/// Draws the K centroids mu_k ~ N(0, tau^2 I) once; the result is shared by train and test data.
ClusteredPriorSpec make_clustered_prior(int p, int K, double tau, double sigma_noise,
                                        int n_obs_min, int n_obs_max, std::uint64_t seed);

enum class NoiseKind { Gaussian, Asymmetric, Bimodal, Trimodal };

// Components are Gaussian (mean, sd) except for Asymmetric, whose single component is
// mean + sd * Exp(1) (i.e. E - 1 with the defaults).
struct NoiseRegime {
  NoiseKind kind = NoiseKind::Gaussian;
  std::vector<double> mixture_weights;
  std::vector<double> mixture_means;
  std::vector<double> mixture_sds;

  static NoiseRegime gaussian();
  static NoiseRegime asymmetric();
  static NoiseRegime bimodal();
  static NoiseRegime trimodal();
  static NoiseRegime from_name(const std::string& name);

  void validate() const;
  double mean() const;
  double variance() const;
  double sample(Rng& rng) const;
  std::string tag() const;
};

std::vector<NoiseRegime> all_noise_regimes();

struct RobustTaskSpec {
  int p = 20;
  double prior_sd = 9.0;
  int n_obs_min = 10;
  int n_obs_max = 30;

  void validate() const;
};

struct SparseTaskSpec {
  int p = 20;
  int sparsity_percent = 50;
  double coef_sd = 1.7320508075688772;  // sqrt(3)
  double noise_sd = 1.0;
  int n_obs_min = 400;
  int n_obs_max = 500;

  void validate() const;
  /// round(p * (1 - k/100)) for the given level.
  int support_size(int level) const;
};

struct RingPriorSpec {
  int K = 8;
  double radius = 5.0;
  double component_sd = 0.35;
  double obs_noise_sd = 1.0;
  static constexpr int p = 2;

  void validate() const;
};

std::vector<Eigen::Vector2d> ring_means(const RingPriorSpec& spec);

// Generators. Task i of a meta-dataset is a pure function of (spec, derive_seed(seed, "task", i));
// the first n_tasks - n_test tasks form the training split.
MetaDataset gen_clustered_meta(const ClusteredPriorSpec& spec, std::size_t n_tasks,
                               std::uint64_t seed, std::size_t n_test = 0);
Task gen_clustered_task(const ClusteredPriorSpec& spec, std::uint64_t task_seed);

MetaDataset gen_robust_meta(const RobustTaskSpec& spec, const NoiseRegime& regime,
                            std::size_t n_tasks, std::uint64_t seed, std::size_t n_test = 0);
Task gen_robust_task(const RobustTaskSpec& spec, const NoiseRegime& regime,
                     std::uint64_t task_seed);

/// Tasks are generated level-major, then shuffled with the seed before the train/test split.
MetaDataset gen_sparse_meta(const SparseTaskSpec& spec, std::size_t tasks_per_level,
                            std::span<const int> levels, std::uint64_t seed,
                            std::size_t n_test = 0);
Task gen_sparse_task(const SparseTaskSpec& spec, int level, std::uint64_t task_seed);

Task gen_ring_task(const RingPriorSpec& spec, int n_obs, std::uint64_t seed);

/// Observations for a fixed coefficient vector: x ~ N(0, I), y = x'beta + regime noise.
Task simulate_linear_task(const Eigen::VectorXd& beta, int n_obs, const NoiseRegime& regime,
                          std::uint64_t seed);

// Directory layout: manifest.json plus task_NNNNN.csv, each with header x1..xp,y, one row of
// beta_true (y field empty), then n_obs rows of [x_1..x_p, y].
void save_meta_dataset(const MetaDataset& meta, const std::filesystem::path& dir);
MetaDataset load_meta_dataset(const std::filesystem::path& dir);

}  // namespace amortlab
