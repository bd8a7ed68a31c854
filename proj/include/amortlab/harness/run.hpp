#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amortlab/flow/flow.hpp"
#include "amortlab/harness/config.hpp"

namespace amortlab {

/// A run failed; `stage()` names the step that raised.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct Artifact {
  std::string path;  // relative to the run directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string experiment;
  std::string code_version;
  std::string started_at;
  std::string finished_at;
  bool complete = false;
  std::string failed_stage;
  std::string error;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> environment;
  std::vector<Artifact> artifacts;

  void write(const std::filesystem::path& path) const;
};

enum class RunMode {
  Full,          // generate, train, evaluate
  GenerateOnly,  // persist the meta-datasets
  TrainOnly,     // train and persist checkpoints and loss traces
  EvaluateOnly,  // load checkpoints written by a training run and evaluate them
};

std::string code_version();

/// Runs one experiment into cfg.output_dir and writes manifest.json there. Figure ids listed in
/// `figures` are emitted before the manifest is sealed. On failure the manifest is written with
/// complete = false and a StageError is thrown.
RunManifest run_experiment(const ExperimentConfig& cfg, RunMode mode = RunMode::Full,
                           const std::vector<std::string>& figures = {});

/// Ids accepted by emit_figure_data.
std::vector<std::string> figure_ids();

/// Writes figures/<figure_id>.csv in long format from a completed run directory.
std::filesystem::path emit_figure_data(const std::filesystem::path& run_dir, const std::string& figure_id);

struct ReproduceTarget {
  ExperimentKind experiment;
  std::string figure_id;
};

/// table1 | table2 | fig1 | fig2 | fig3 | table4 | fig4 | fig5.
ReproduceTarget reproduce_target(const std::string& name);

struct BenchRow {
  std::string method;
  std::size_t task_id = 0;
  double wall_ms = 0.0;
  std::size_t n_samples = 0;
};

struct BenchSummary {
  std::vector<BenchRow> rows;
  double flow_median_ms = 0.0;
  double mcmc_median_ms = 0.0;
};

/// Times sample_posterior and rw_metropolis on the same n_tasks ring tasks, both producing
/// cfg.ring_samples retained samples per task. Writes (method, task_id, wall_ms, n_samples).
BenchSummary bench_timing(const ExperimentConfig& cfg, const FlowModel& flow, std::size_t n_tasks,
                          const std::filesystem::path& csv_path);

double median(std::vector<double> v);

}  // namespace amortlab
