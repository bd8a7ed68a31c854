#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "amortlab/error.hpp"
#include "amortlab/flow/flow.hpp"
#include "amortlab/io.hpp"
#include "amortlab/harness/config.hpp"
#include "amortlab/harness/run.hpp"

namespace fs = std::filesystem;
using namespace amortlab;

namespace {

struct CommonOptions {
  std::string config;
  std::string experiment;
  std::string profile;
  std::string out;
  std::string checkpoints;
  std::string seed;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_experiment) {
  cmd->add_option("--config", o.config, "config file (key = value lines)")->check(CLI::ExistingFile);
  if (with_experiment)
    cmd->add_option("--experiment", o.experiment,
                    "latent_structure | robustness | sparse_recovery | ring_posterior");
  cmd->add_option("--profile", o.profile, "desk | paper");
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--checkpoints", o.checkpoints, "comma separated checkpoint epochs");
  cmd->add_option("--set", o.set, "extra key=value override (repeatable)");
}

ExperimentConfig build_config(const CommonOptions& o, const std::string& forced_experiment = {}) {
  ParsedConfigFile file;
  if (!o.config.empty()) file = read_config_file(o.config);
  std::string experiment = forced_experiment.empty() ? o.experiment : forced_experiment;
  if (experiment.empty() && file.experiment.empty())
    throw ValidationError("no experiment given; pass --experiment or set 'experiment' in the config file");
  // Command-line settings amend the file, so checkpoint fitting sees the final epochs.
  if (!o.seed.empty()) file.entries.emplace_back("seed", o.seed);
  if (!o.out.empty()) file.entries.emplace_back("output_dir", o.out);
  if (!o.checkpoints.empty()) file.entries.emplace_back("train.checkpoints", o.checkpoints);
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    file.entries.emplace_back(io::trim(kv.substr(0, eq)), io::trim(kv.substr(eq + 1)));
  }
  ExperimentConfig cfg = load_config(file, experiment, o.profile);
  cfg.validate();
  return cfg;
}

int report(const RunManifest& m, const ExperimentConfig& cfg) {
  std::cout << m.experiment << ": complete, " << m.artifacts.size() << " artifacts in " << cfg.output_dir.string()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"amortlab: amortized set-to-vector estimators and posterior flows"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, bench_o, repro_o;
  auto* gen = app.add_subcommand("generate", "write the meta-datasets for an experiment");
  add_common(gen, gen_o, true);
  auto* train = app.add_subcommand("train", "train models and save checkpoints");
  add_common(train, train_o, true);
  auto* evaluate = app.add_subcommand("evaluate", "evaluate saved checkpoints");
  add_common(evaluate, eval_o, true);

  auto* bench = app.add_subcommand("bench", "time flow sampling against random-walk Metropolis");
  add_common(bench, bench_o, false);
  std::size_t bench_tasks = 0;
  bench->add_option("--tasks", bench_tasks, "number of benchmark tasks (default from config)");

  auto* repro = app.add_subcommand("reproduce", "run the experiment behind one table or figure");
  add_common(repro, repro_o, false);
  std::string target;
  repro->add_option("target", target, "table1 | table2 | fig1 | fig2 | fig3 | table4 | fig4 | fig5")->required();

  auto* keys = app.add_subcommand("keys", "list config keys");

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    if (keys->parsed()) {
      for (const auto& [k, doc] : config_keys()) std::cout << k << "\t" << doc << '\n';
      return 0;
    }
    if (gen->parsed()) {
      const auto cfg = build_config(gen_o);
      return report(run_experiment(cfg, RunMode::GenerateOnly), cfg);
    }
    if (train->parsed()) {
      const auto cfg = build_config(train_o);
      return report(run_experiment(cfg, RunMode::TrainOnly), cfg);
    }
    if (evaluate->parsed()) {
      const auto cfg = build_config(eval_o);
      return report(run_experiment(cfg, RunMode::EvaluateOnly), cfg);
    }
    if (repro->parsed()) {
      const ReproduceTarget t = reproduce_target(target);
      const auto cfg = build_config(repro_o, experiment_name(t.experiment));
      const RunManifest m = run_experiment(cfg, RunMode::Full, {t.figure_id});
      std::cout << "figure data: " << (cfg.output_dir / "figures" / (t.figure_id + ".csv")).string() << '\n';
      return report(m, cfg);
    }
    if (bench->parsed()) {
      const auto cfg = build_config(bench_o, experiment_name(ExperimentKind::RingPosterior));
      const fs::path ckpt = cfg.output_dir / "checkpoints" / "flow.ckpt";
      if (!fs::exists(ckpt)) {
        std::cerr << "no flow checkpoint in " << cfg.output_dir.string() << "; training one first\n";
        run_experiment(cfg, RunMode::TrainOnly);
      }
      stage = "bench";
      const FlowModel flow = FlowModel::load(ckpt);
      const std::size_t n = bench_tasks ? bench_tasks : cfg.bench_tasks;
      const BenchSummary s = bench_timing(cfg, flow, n, cfg.output_dir / "timing.csv");
      std::cout << "median wall ms over " << n << " tasks, " << cfg.ring_samples << " samples each: flow "
                << s.flow_median_ms << ", mcmc " << s.mcmc_median_ms << '\n';
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error (" << stage << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error (" << stage << "): " << e.what() << '\n';
    return 1;
  }
  return 0;
}
