#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "amortlab/baselines/baselines.hpp"
#include "amortlab/estimators/estimator.hpp"
#include "amortlab/flow/flow.hpp"
#include "amortlab/task_gen.hpp"

namespace amortlab {

enum class ExperimentKind { LatentStructure, Robustness, SparseRecovery, RingPosterior };

std::string experiment_name(ExperimentKind kind);
ExperimentKind experiment_from_name(const std::string& name);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::LatentStructure;
  std::string profile = "desk";
  std::uint64_t root_seed = 0;
  std::filesystem::path output_dir = "runs/default";

  std::vector<std::string> models{"deep_sets", "set_transformer"};
  TrainConfig train;
  DeepSetsArch deep_sets;
  SetTransformerArch set_transformer;

  // Latent structure recovery.
  std::vector<int> cluster_counts{5, 10, 50};
  ClusteredPriorSpec clustered;
  std::size_t clustered_train = 2000;
  std::size_t clustered_test = 200;

  // Robustness.
  RobustTaskSpec robust;
  std::size_t robust_train = 2000;
  std::size_t robust_test = 200;
  std::string train_regime = "gaussian";  // or "matched": one model per evaluation regime
  std::vector<std::string> eval_regimes{"gaussian", "asymmetric", "bimodal", "trimodal"};

  // Bootstrap stability (robustness and sparse experiments).
  std::vector<int> bootstrap_sizes{50, 100, 200, 500, 1000};
  int bootstrap_replicates = 100;
  int bootstrap_tasks = 1;

  // Sparse recovery.
  SparseTaskSpec sparse;
  std::vector<int> sparse_levels{20, 50, 80};
  std::size_t sparse_tasks_per_level = 150;
  std::size_t sparse_test = 45;
  std::vector<int> sparse_bootstrap_levels{20, 50, 80};

  // Ring posterior.
  RingPriorSpec ring;
  int ring_n_obs = 4;
  int ring_informative_n_obs = 20;
  FlowArch flow;
  TrainConfig flow_train;
  std::size_t flow_tasks_per_epoch = 2048;
  FlowDataConfig flow_data;
  OdeConfig ode;
  std::size_t ring_samples = 4000;
  std::size_t energy_samples = 2000;
  int energy_resamples = 100;
  std::size_t trajectory_particles = 500;
  McmcConfig mcmc;
  std::size_t bench_tasks = 5;

  void validate() const;
  /// Every documented key with its effective value, in registry order.
  std::vector<std::pair<std::string, std::string>> snapshot() const;
};

/// Profile defaults for one experiment ("desk" or "paper").
ExperimentConfig default_config(ExperimentKind experiment, const std::string& profile);

/// Applies one key = value setting. Unknown keys and malformed values raise ValidationError.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// All documented keys with a one-line description.
std::vector<std::pair<std::string, std::string>> config_keys();

/// Drops profile checkpoints beyond the configured epochs and makes sure the last epoch is one.
void fit_checkpoints(TrainConfig& train);

// Flat text format: one "key = value" per line, '#' starts a comment, lists are comma separated.
// The experiment key (or `experiment_override`) selects the profile defaults the file amends.
struct ParsedConfigFile {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string experiment;  // empty when the file does not set it
  std::string profile;     // empty when the file does not set it
};
ParsedConfigFile read_config_file(const std::filesystem::path& path);

ExperimentConfig load_config(const ParsedConfigFile& file, const std::string& experiment_override,
                             const std::string& profile_override);

}  // namespace amortlab
