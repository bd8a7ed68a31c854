#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "amortlab/error.hpp"
#include "amortlab/harness/config.hpp"
#include "amortlab/harness/run.hpp"
#include "amortlab/io.hpp"
#include "helpers.hpp"

using namespace amortlab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_latent(const fs::path& out) {
  ExperimentConfig c = default_config(ExperimentKind::LatentStructure, "desk");
  apply_setting(c, "output_dir", out.string());
  apply_setting(c, "seed", "7");
  apply_setting(c, "clustered.K", "3");
  apply_setting(c, "clustered.p", "4");
  apply_setting(c, "clustered.n_train", "40");
  apply_setting(c, "clustered.n_test", "10");
  apply_setting(c, "train.epochs", "2");
  apply_setting(c, "train.checkpoints", "1,2");
  apply_setting(c, "deep_sets.encoder_hidden", "8");
  apply_setting(c, "deep_sets.latent", "8");
  apply_setting(c, "deep_sets.decoder_hidden", "8");
  apply_setting(c, "set_transformer.d_model", "8");
  apply_setting(c, "set_transformer.ffn_width", "8");
  apply_setting(c, "set_transformer.embed_hidden", "8");
  apply_setting(c, "set_transformer.head_hidden", "8");
  return c;
}

ExperimentConfig tiny_ring(const fs::path& out) {
  ExperimentConfig c = default_config(ExperimentKind::RingPosterior, "desk");
  apply_setting(c, "output_dir", out.string());
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"flow.epochs", "2"}, {"flow.tasks_per_epoch", "64"}, {"flow.batch", "32"},
           {"flow.velocity_hidden", "16,16"}, {"flow.d_ctx", "4"}, {"flow.encoder_hidden", "8"},
           {"flow.encoder_latent", "8"}, {"flow.decoder_hidden", "8"}, {"ring.samples", "50"},
           {"ring.energy_samples", "20"}, {"ring.energy_resamples", "5"}, {"ring.trajectory_particles", "6"},
           {"ring.bench_tasks", "1"}, {"mcmc.steps", "300"}, {"mcmc.burn_in", "100"}, {"ode.steps", "8"}})
    apply_setting(c, k, v);
  return c;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST_CASE("defaults validate for every experiment and profile") {
  for (auto e : {ExperimentKind::LatentStructure, ExperimentKind::Robustness, ExperimentKind::SparseRecovery,
                 ExperimentKind::RingPosterior})
    for (const std::string p : {"desk", "paper"}) CHECK_NOTHROW(default_config(e, p).validate());
  const auto desk = default_config(ExperimentKind::LatentStructure, "desk");
  CHECK(desk.clustered_train == 2000);
  CHECK(desk.train.epochs == 50);
  CHECK(default_config(ExperimentKind::Robustness, "paper").robust_train == 5400);
  CHECK_THROWS_AS(default_config(ExperimentKind::LatentStructure, "laptop"), ValidationError);
}

TEST_CASE("config keys are documented and unknown keys fail") {
  ExperimentConfig c = default_config(ExperimentKind::LatentStructure, "desk");
  CHECK_THROWS_AS(apply_setting(c, "train.epochz", "3"), ValidationError);
  CHECK_THROWS_AS(apply_setting(c, "train.epochs", "three"), ValidationError);
  apply_setting(c, "clustered.K", "5,10");
  CHECK(c.cluster_counts == std::vector<int>{5, 10});
  CHECK(config_keys().size() == c.snapshot().size());
}

TEST_CASE("config files amend profile defaults") {
  testutil::TempDir dir("cfg");
  const fs::path file = dir.path / "c.cfg";
  std::ofstream(file) << "# reduced run\nexperiment = robustness\ntrain.epochs = 20  # short\nrobust.n_train = 100\n";
  const ParsedConfigFile parsed = read_config_file(file);
  CHECK(parsed.experiment == "robustness");
  const ExperimentConfig c = load_config(parsed, "", "");
  CHECK(c.experiment == ExperimentKind::Robustness);
  CHECK(c.train.epochs == 20);
  CHECK(c.robust_train == 100);
  CHECK(c.train.checkpoints == std::vector<int>{10, 20});  // profile list trimmed to the epochs

  std::ofstream(file) << "bogus.key = 1\n";
  CHECK_THROWS_AS(read_config_file(file), ValidationError);
}

TEST_CASE("figure and reproduce registries") {
  const auto ids = figure_ids();
  CHECK(ids.size() == 8);
  CHECK(reproduce_target("fig1").figure_id == "learning_dynamics");
  CHECK(reproduce_target("table4").experiment == ExperimentKind::SparseRecovery);
  CHECK_THROWS_AS(reproduce_target("fig9"), ValidationError);
  testutil::TempDir dir("fig");
  CHECK_THROWS_AS(emit_figure_data(dir.path, "fig_unknown"), ValidationError);
}

TEST_CASE("latent experiment end to end is deterministic") {
  testutil::TempDir a("run_a"), b("run_b");
  const RunManifest ma = run_experiment(tiny_latent(a.path), RunMode::Full, {"table1"});
  run_experiment(tiny_latent(b.path), RunMode::Full, {"table1"});
  CHECK(ma.complete);
  const io::CsvTable t = io::read_csv(a.path / "table1.csv");
  CHECK(t.header == std::vector<std::string>{"K", "ols", "deep_sets", "set_transformer", "bayes_oracle"});
  CHECK(t.rows.size() == 1);
  for (const auto* f : {"table1.csv", "traces.csv", "metrics.csv", "figures/table1.csv"})
    CHECK(slurp(a.path / f) == slurp(b.path / f));

  // Manifest checksums describe the files on disk.
  const auto j = nlohmann::json::parse(slurp(a.path / "manifest.json"));
  CHECK(j["status"] == "complete");
  CHECK(j["code_version"] == code_version());
  CHECK(j["config"]["seed"] == "7");
  CHECK(j["artifacts"].size() == ma.artifacts.size());
  for (const auto& art : j["artifacts"]) {
    const fs::path p = a.path / art["path"].get<std::string>();
    CHECK(io::sha256_file(p) == art["sha256"].get<std::string>());
    CHECK(fs::file_size(p) == art["bytes"].get<std::uintmax_t>());
  }
}

TEST_CASE("train-only then evaluate-only matches a full run") {
  testutil::TempDir full("run_full"), split("run_split");
  run_experiment(tiny_latent(full.path), RunMode::Full);
  run_experiment(tiny_latent(split.path), RunMode::TrainOnly);
  CHECK(fs::exists(split.path / "checkpoints" / "K3_deep_sets_e2.ckpt"));
  CHECK_FALSE(fs::exists(split.path / "table1.csv"));
  run_experiment(tiny_latent(split.path), RunMode::EvaluateOnly);
  CHECK(slurp(full.path / "table1.csv") == slurp(split.path / "table1.csv"));
}

TEST_CASE("generate-only writes datasets") {
  testutil::TempDir dir("run_gen");
  run_experiment(tiny_latent(dir.path), RunMode::GenerateOnly);
  const MetaDataset m = load_meta_dataset(dir.path / "data" / "K3_train");
  CHECK(m.tasks.size() == 40);
  CHECK_FALSE(fs::exists(dir.path / "checkpoints"));
}

TEST_CASE("a failing stage marks the manifest incomplete") {
  testutil::TempDir dir("run_fail");
  try {
    run_experiment(tiny_latent(dir.path), RunMode::EvaluateOnly);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "load:K3:deep_sets");
  }
  const auto j = nlohmann::json::parse(slurp(dir.path / "manifest.json"));
  CHECK(j["status"] == "incomplete");
  CHECK(j["failed_stage"] == "load:K3:deep_sets");
}

TEST_CASE("ring experiment writes every artifact") {
  testutil::TempDir dir("run_ring");
  run_experiment(tiny_ring(dir.path), RunMode::Full, {"posterior_samples", "flow_trajectory"});
  for (const auto* f : {"posterior_samples.csv", "coverage.csv", "energy.csv", "trajectory.csv", "timing.csv",
                        "flow_trace.csv", "checkpoints/flow.ckpt", "posterior_default.txt",
                        "figures/flow_trajectory.csv"})
    CHECK(fs::exists(dir.path / f));
  const io::CsvTable s = io::read_csv(dir.path / "posterior_samples.csv");
  CHECK(s.header == std::vector<std::string>{"method", "beta1", "beta2", "sample_index", "task_id", "seed"});
  CHECK(s.rows.size() == 3 * 3 * 50);
  const io::CsvTable tr = io::read_csv(dir.path / "figures" / "flow_trajectory.csv");
  CHECK(tr.header == std::vector<std::string>{"t", "particle_id", "beta1", "beta2"});
  CHECK(tr.rows.size() == 5 * 6);
}

TEST_CASE("bench with no tasks writes only the header") {
  testutil::TempDir dir("bench");
  const auto cfg = tiny_ring(dir.path);
  const FlowModel flow = FlowModel::create(cfg.flow, 1);
  const BenchSummary s = bench_timing(cfg, flow, 0, dir.path / "t.csv");
  CHECK(s.rows.empty());
  CHECK(slurp(dir.path / "t.csv") == "method,task_id,wall_ms,n_samples\n");
  const BenchSummary two = bench_timing(cfg, flow, 2, dir.path / "t2.csv");
  CHECK(two.rows.size() == 4);
  CHECK(two.flow_median_ms > 0.0);
}

TEST_CASE("median") {
  CHECK(median({}) == 0.0);
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("command line exit codes name the failing stage") {
  testutil::TempDir dir("cli");
  const std::string cli = AMORTLAB_CLI;
  const std::string log = (dir.path / "err.txt").string();
  int rc = std::system((cli + " evaluate --experiment latent_structure --out " + (dir.path / "r").string() +
                        " --set clustered.K=3 2> " + log).c_str());
  CHECK(rc != 0);
  CHECK(slurp(log).find("load:K3:deep_sets") != std::string::npos);
  rc = std::system((cli + " reproduce fig7 2> " + log).c_str());
  CHECK(rc != 0);
  rc = std::system((cli + " train --set nope=1 --experiment robustness 2> " + log).c_str());
  CHECK(rc != 0);
  CHECK(slurp(log).find("nope") != std::string::npos);
}
