#include "amortlab/harness/run.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "amortlab/baselines/baselines.hpp"
#include "amortlab/error.hpp"
#include "amortlab/eval/metrics.hpp"
#include "amortlab/io.hpp"
#include "amortlab/rng.hpp"

#ifndef AMORTLAB_VERSION
#define AMORTLAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace amortlab {

std::string code_version() { return std::string("amortlab ") + AMORTLAB_VERSION; }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

using Header = std::vector<std::string>;

// One trained model at one checkpoint epoch.
struct Snapshot {
  int epoch = 0;
  Estimator model;
};

class Run {
 public:
  Run(const ExperimentConfig& cfg, RunMode mode) : cfg(cfg), mode(mode), dir(cfg.output_dir) {}

  const ExperimentConfig& cfg;
  RunMode mode;
  fs::path dir;
  std::string stage = "setup";
  std::vector<MetricRecord> metrics;
  std::vector<fs::path> produced;

  bool generate() const { return mode == RunMode::Full || mode == RunMode::GenerateOnly; }
  bool train() const { return mode == RunMode::Full || mode == RunMode::TrainOnly; }
  bool evaluate() const { return mode == RunMode::Full || mode == RunMode::EvaluateOnly; }

  template <class F>
  auto step(const std::string& name, F&& f) {
    stage = name;
    return f();
  }

  fs::path out(const fs::path& rel) {
    const fs::path full = dir / rel;
    fs::create_directories(full.parent_path());
    if (std::find(produced.begin(), produced.end(), rel) == produced.end()) produced.push_back(rel);
    return full;
  }

  void save_data(const std::string& name, const MetaDataset& meta) {
    const fs::path rel = fs::path("data") / name;
    save_meta_dataset(meta, dir / rel);
    for (const auto& e : fs::directory_iterator(dir / rel))
      if (e.is_regular_file()) produced.push_back(rel / e.path().filename());
  }

  void metric(const std::string& model, const std::string& checkpoint, const std::string& name,
              double value, std::size_t n_tasks, std::uint64_t seed) {
    metrics.push_back({experiment_name(cfg.experiment), model, checkpoint, name, value, n_tasks, seed});
  }

  // Trains (or reloads) one estimator and returns one snapshot per checkpoint epoch.
  std::vector<Snapshot> fit(const std::string& scope, const std::string& model_name,
                            const MetaDataset& meta, const TrainConfig& base) {
    const EstimatorKind kind = estimator_kind_from_name(model_name);
    TrainConfig tc = base;
    tc.seed = derive_seed(cfg.root_seed, "train:" + scope + ":" + model_name, 0);
    std::vector<int> marks = tc.checkpoints;
    if (marks.empty() && tc.epochs > 0) marks.push_back(tc.epochs);
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
    tc.checkpoints = marks;

    auto ckpt = [&](int epoch) {
      return fs::path("checkpoints") / (scope + "_" + model_name + "_e" + std::to_string(epoch) + ".ckpt");
    };

    std::vector<Snapshot> snaps;
    if (train()) {
      const std::uint64_t init = derive_seed(cfg.root_seed, "init:" + scope + ":" + model_name, 0);
      Estimator est;
      if (kind == EstimatorKind::DeepSets) {
        DeepSetsArch arch = cfg.deep_sets;
        arch.p = meta.tasks.front().dim();
        est = Estimator::deep_sets(arch, init);
      } else {
        SetTransformerArch arch = cfg.set_transformer;
        arch.p = meta.tasks.front().dim();
        arch.sparse = kind == EstimatorKind::SparseSetTransformer;
        est = Estimator::set_transformer(arch, init);
      }
      auto hook = [&](int epoch, const Estimator& m) {
        m.save(out(ckpt(epoch)));
        snaps.push_back({epoch, m});
      };
      const auto trace = step("train:" + scope + ":" + model_name,
                              [&] { return train_estimator(est, meta, tc, hook); });
      if (tc.epochs == 0) {
        est.save(out(ckpt(0)));
        snaps.push_back({0, est});
      }
      const fs::path trace_path = out("traces.csv");
      const bool append = traced_;
      traced_ = true;
      io::CsvWriter w(trace_path, Header{"scope", "model", "epoch", "train_loss", "heldout_mse"}, append);
      for (const auto& r : trace)
        w.field(scope).field(model_name).field(r.epoch).field(r.train_loss).field(r.heldout_mse).end_row();
    } else if (evaluate()) {
      step("load:" + scope + ":" + model_name, [&] {
        if (tc.epochs == 0) marks = {0};
        for (int e : marks) {
          const fs::path p = dir / ckpt(e);
          if (!fs::exists(p)) throw ValidationError("missing checkpoint " + p.string() + "; run train first");
          snaps.push_back({e, Estimator::load(p)});
        }
      });
    }
    return snaps;
  }

  void finish_metrics() {
    if (metrics.empty()) return;
    const fs::path p = out("metrics.csv");
    fs::remove(p);
    append_metric_records(p, metrics);
  }

 private:
  bool traced_ = false;
};

MetaDataset concat(const MetaDataset& train, const MetaDataset& test) {
  MetaDataset m;
  m.tasks = train.tasks;
  m.tasks.insert(m.tasks.end(), test.tasks.begin(), test.tasks.end());
  m.n_train = train.tasks.size();
  m.n_test = test.tasks.size();
  m.global_seed = train.global_seed;
  m.spec_tag = train.spec_tag;
  return m;
}

double mean_of(std::span<const Task> tasks, const std::function<Eigen::VectorXd(const Task&)>& est) {
  std::vector<Eigen::VectorXd> a, b;
  for (const Task& t : tasks) {
    a.push_back(est(t));
    b.push_back(t.beta_true);
  }
  return mse_beta(a, b);
}

// Latent structure recovery: OLS, learned estimators and the Bayes oracle per cluster count.
void run_latent(Run& r) {
  const ExperimentConfig& cfg = r.cfg;
  std::map<int, std::map<std::string, double>> table;
  for (int K : cfg.cluster_counts) {
    const std::string scope = "K" + std::to_string(K);
    const auto& c = cfg.clustered;
    const ClusteredPriorSpec spec = r.step("generate:" + scope, [&] {
      return make_clustered_prior(c.p, K, c.tau, c.sigma_noise, c.n_obs_min, c.n_obs_max,
                                  derive_seed(cfg.root_seed, "centroids", K));
    });
    const MetaDataset train = r.step("generate:" + scope, [&] {
      return gen_clustered_meta(spec, cfg.clustered_train, derive_seed(cfg.root_seed, "train", K));
    });
    const MetaDataset test = r.step("generate:" + scope, [&] {
      return gen_clustered_meta(spec, cfg.clustered_test, derive_seed(cfg.root_seed, "test", K));
    });
    if (r.generate()) {
      r.step("generate:" + scope, [&] {
        r.save_data(scope + "_train", train);
        r.save_data(scope + "_test", test);
      });
    }
    if (r.mode == RunMode::GenerateOnly) continue;
    const MetaDataset meta = concat(train, test);
    const std::uint64_t test_seed = derive_seed(cfg.root_seed, "test", K);

    if (r.evaluate()) {
      r.step("evaluate:" + scope + ":baselines", [&] {
        table[K]["ols"] = mean_of(test.train(), [](const Task& t) { return ols_fit(t); });
        table[K]["bayes_oracle"] =
            mean_of(test.train(), [&](const Task& t) { return bayes_posterior_mean_clustered(t, spec); });
      });
      r.metric("ols", "-", "mse_beta:" + scope, table[K]["ols"], cfg.clustered_test, test_seed);
      r.metric("bayes_oracle", "-", "mse_beta:" + scope, table[K]["bayes_oracle"], cfg.clustered_test, test_seed);
    }
    for (const auto& name : cfg.models) {
      const auto snaps = r.fit(scope, name, meta, cfg.train);
      if (!r.evaluate()) continue;
      r.step("evaluate:" + scope + ":" + name, [&] {
        for (const auto& s : snaps) {
          const double mse = evaluate_estimator(s.model, test.train(), Metric::MseBeta);
          r.metric(name, std::to_string(s.epoch), "mse_beta:" + scope, mse, cfg.clustered_test, test_seed);
          if (&s == &snaps.back()) table[K][name] = mse;
        }
      });
    }
  }
  if (!r.evaluate()) return;
  r.step("write:table1", [&] {
    Header h{"K", "ols"};
    for (const auto& m : cfg.models) h.push_back(m);
    h.push_back("bayes_oracle");
    io::CsvWriter w(r.out("table1.csv"), h);
    for (const auto& [K, row] : table) {
      w.field(K);
      for (std::size_t i = 1; i < h.size(); ++i) w.field(row.at(h[i]));
      w.end_row();
    }
  });
}

// Bootstrap sd for a fixed estimator, averaged over the first n_tasks coefficient vectors.
double mean_sigma_boot(const TaskEstimator& est, std::span<const Task> truths, int n_tasks, int n_obs,
                       int replicates, const NoiseRegime& regime, std::uint64_t seed) {
  const int m = std::min<int>(n_tasks, static_cast<int>(truths.size()));
  require(m >= 1, "bootstrap needs at least one coefficient vector");
  double total = 0.0;
  for (int i = 0; i < m; ++i)
    total += bootstrap_stability(est, truths[i].beta_true, n_obs, replicates, regime,
                                 derive_seed(seed, "task", static_cast<std::uint64_t>(i)))
                 .sigma_boot;
  return total / m;
}

void run_robust(Run& r) {
  const ExperimentConfig& cfg = r.cfg;
  const std::size_t n_total = cfg.robust_train + cfg.robust_test;
  // Same seed across regimes: the (beta, X) draws coincide and only the noise differs.
  const std::uint64_t task_seed = derive_seed(cfg.root_seed, "tasks", 0);
  std::map<std::string, MetaDataset> sets;
  for (const auto& name : cfg.eval_regimes) {
    sets[name] = r.step("generate:" + name, [&] {
      return gen_robust_meta(cfg.robust, NoiseRegime::from_name(name), n_total, task_seed, cfg.robust_test);
    });
  }
  const bool matched = cfg.train_regime == "matched";
  std::vector<std::string> train_regimes;
  if (matched) {
    train_regimes = cfg.eval_regimes;
  } else {
    train_regimes = {cfg.train_regime};
    if (!sets.count(cfg.train_regime)) {
      sets[cfg.train_regime] = r.step("generate:" + cfg.train_regime, [&] {
        return gen_robust_meta(cfg.robust, NoiseRegime::from_name(cfg.train_regime), n_total, task_seed,
                               cfg.robust_test);
      });
    }
  }
  if (r.generate())
    r.step("generate:save", [&] {
      for (const auto& [name, meta] : sets) r.save_data(name, meta);
    });
  if (r.mode == RunMode::GenerateOnly) return;

  struct Row {
    std::string model, regime;
    int epoch;
    double mse;
  };
  std::vector<Row> dynamics, table;
  struct BootRow {
    std::string model, regime;
    int n;
    double sigma;
  };
  std::vector<BootRow> boot;

  for (const auto& tr : train_regimes) {
    const MetaDataset& train_meta = sets.at(tr);
    const std::string scope = matched ? "robust_" + tr : std::string("robust");
    for (const auto& name : cfg.models) {
      const auto snaps = r.fit(scope, name, train_meta, cfg.train);
      if (!r.evaluate() || snaps.empty()) continue;
      const std::string tag = matched ? name + "@" + tr : name;
      r.step("evaluate:" + scope + ":" + name, [&] {
        for (const auto& s : snaps) {
          if (tr == train_regimes.front() || matched) {
            dynamics.push_back({tag, "train", s.epoch, evaluate_estimator(s.model, train_meta.train(), Metric::MseBeta)});
            dynamics.push_back({tag, "test", s.epoch, evaluate_estimator(s.model, train_meta.test(), Metric::MseBeta)});
          }
          for (const auto& er : cfg.eval_regimes) {
            if (matched && er != tr) continue;
            const double mse = evaluate_estimator(s.model, sets.at(er).test(), Metric::MseBeta);
            table.push_back({tag, er, s.epoch, mse});
            r.metric(tag, std::to_string(s.epoch), "mse_beta:" + er, mse, cfg.robust_test, task_seed);
          }
        }
      });
      r.step("bootstrap:" + scope + ":" + name, [&] {
        const Estimator& final_model = snaps.back().model;
        const TaskEstimator est = [&](const Task& t) { return final_model.predict(t); };
        for (const auto& er : cfg.eval_regimes) {
          if (matched && er != tr) continue;
          for (int n : cfg.bootstrap_sizes) {
            const double s = mean_sigma_boot(est, sets.at(er).test(), cfg.bootstrap_tasks, n, cfg.bootstrap_replicates,
                                             NoiseRegime::from_name(er),
                                             derive_seed(cfg.root_seed, "bootstrap:" + er, static_cast<std::uint64_t>(n)));
            boot.push_back({tag, er, n, s});
          }
        }
      });
    }
  }
  if (!r.evaluate()) return;

  r.step("bootstrap:ols", [&] {
    const TaskEstimator est = [](const Task& t) { return ols_fit(t); };
    for (const auto& er : cfg.eval_regimes)
      for (int n : cfg.bootstrap_sizes)
        boot.push_back({"ols", er, n,
                        mean_sigma_boot(est, sets.at(er).test(), cfg.bootstrap_tasks, n, cfg.bootstrap_replicates,
                                        NoiseRegime::from_name(er),
                                        derive_seed(cfg.root_seed, "bootstrap:" + er, static_cast<std::uint64_t>(n)))});
  });

  r.step("write:robustness", [&] {
    {
      io::CsvWriter w(r.out("learning_dynamics.csv"), Header{"model", "split", "epoch", "mse"});
      for (const auto& d : dynamics) w.field(d.model).field(d.regime).field(d.epoch).field(d.mse).end_row();
    }
    {
      io::CsvWriter w(r.out("table2.csv"), Header{"model", "regime", "epoch", "mse"});
      for (const auto& d : table) w.field(d.model).field(d.regime).field(d.epoch).field(d.mse).end_row();
      // Pooled multimodal row: equal-sized test sets, so the pooled MSE is the plain mean.
      std::map<std::pair<std::string, int>, std::vector<double>> pooled;
      for (const auto& d : table)
        if (d.regime == "bimodal" || d.regime == "trimodal") pooled[{d.model, d.epoch}].push_back(d.mse);
      for (const auto& [key, v] : pooled)
        if (v.size() == 2) w.field(key.first).field("multimodal").field(key.second).field(0.5 * (v[0] + v[1])).end_row();
    }
    {
      io::CsvWriter w(r.out("bootstrap.csv"), Header{"model", "regime", "N", "sigma_boot"});
      for (const auto& b : boot) w.field(b.model).field(b.regime).field(b.n).field(b.sigma).end_row();
    }
  });
}

void run_sparse(Run& r) {
  const ExperimentConfig& cfg = r.cfg;
  const std::uint64_t seed = derive_seed(cfg.root_seed, "tasks", 0);
  const MetaDataset meta = r.step("generate", [&] {
    return gen_sparse_meta(cfg.sparse, cfg.sparse_tasks_per_level, cfg.sparse_levels, seed, cfg.sparse_test);
  });
  if (r.generate()) r.step("generate:save", [&] { r.save_data("sparse", meta); });
  if (r.mode == RunMode::GenerateOnly) return;

  // The gated head is the sparse variant of whichever set model is requested.
  const auto snaps = r.fit("sparse", "sparse_set_transformer", meta, cfg.train);
  if (!r.evaluate()) return;

  std::vector<int> levels = cfg.sparse_levels;
  std::sort(levels.begin(), levels.end());
  r.step("evaluate:cosine", [&] {
    io::CsvWriter w(r.out("sparse_cosine.csv"),
                    Header{"epoch", "level", "cosine", "cosine_hard", "n_tasks", "n_degenerate"});
    for (const auto& s : snaps) {
      for (int level : levels) {
        double soft = 0.0, hard = 0.0;
        std::size_t n = 0, degenerate = 0;
        for (const Task& t : meta.test()) {
          if (t.sparsity_level != level) continue;
          bool deg = false;
          soft += cosine_similarity(s.model.predict(t), t.beta_true, &deg);
          hard += cosine_similarity(s.model.predict_hard(t), t.beta_true);
          degenerate += deg ? 1 : 0;
          ++n;
        }
        if (n == 0) continue;
        w.field(s.epoch).field(level).field(soft / n).field(hard / n).field(n).field(degenerate).end_row();
        r.metric("sparse_set_transformer", std::to_string(s.epoch), "cosine:" + std::to_string(level), soft / n, n, seed);
      }
    }
  });

  r.step("bootstrap:sparse", [&] {
    const Estimator& model = snaps.back().model;
    const TaskEstimator est = [&](const Task& t) { return model.predict_hard(t); };
    NoiseRegime regime = NoiseRegime::gaussian();
    regime.mixture_sds = {cfg.sparse.noise_sd};
    io::CsvWriter w(r.out("sparse_bootstrap.csv"), Header{"level", "N", "sigma_boot"});
    for (int level : cfg.sparse_bootstrap_levels) {
      std::vector<Task> truths;
      for (int i = 0; i < std::max(1, cfg.bootstrap_tasks); ++i)
        truths.push_back(gen_sparse_task(cfg.sparse, level,
                                         derive_seed(cfg.root_seed, "bootstrap_beta:" + std::to_string(level), i)));
      for (int n : cfg.bootstrap_sizes) {
        const double sd = mean_sigma_boot(est, truths, cfg.bootstrap_tasks, n, cfg.bootstrap_replicates, regime,
                                          derive_seed(cfg.root_seed, "bootstrap:" + std::to_string(level), n));
        w.field(level).field(n).field(sd).end_row();
      }
    }
  });
}

struct RingTask {
  std::string id;
  Task task;
};

std::vector<RingTask> ring_tasks(const ExperimentConfig& cfg) {
  return {
      {"prior", gen_ring_task(cfg.ring, 0, derive_seed(cfg.root_seed, "ring_task", 0))},
      {"default", gen_ring_task(cfg.ring, cfg.ring_n_obs, derive_seed(cfg.root_seed, "ring_task", 1))},
      {"informative", gen_ring_task(cfg.ring, cfg.ring_informative_n_obs, derive_seed(cfg.root_seed, "ring_task", 2))},
  };
}

// Evenly spaced rows, so a long chain is compared at the same size as the other samplers.
Eigen::MatrixXd thin(const Eigen::MatrixXd& s, std::size_t n) {
  if (static_cast<std::size_t>(s.rows()) <= n) return s;
  Eigen::MatrixXd out(n, s.cols());
  for (std::size_t i = 0; i < n; ++i) out.row(i) = s.row(static_cast<Eigen::Index>(i * s.rows() / n));
  return out;
}

McmcConfig bench_mcmc(const ExperimentConfig& cfg, std::uint64_t seed) {
  McmcConfig m = cfg.mcmc;
  m.n_steps = m.burn_in + static_cast<int>(cfg.ring_samples);
  m.seed = seed;
  return m;
}

void run_ring(Run& r) {
  const ExperimentConfig& cfg = r.cfg;
  const auto tasks = r.step("generate", [&] { return ring_tasks(cfg); });
  if (r.generate())
    r.step("generate:save", [&] {
      MetaDataset m;
      for (const auto& t : tasks) m.tasks.push_back(t.task);
      m.n_train = m.tasks.size();
      m.global_seed = derive_seed(cfg.root_seed, "ring_task", 0);
      m.spec_tag = "ring";
      r.save_data("ring_tasks", m);
      ring_prior(cfg.ring).save(r.out("data/ring_prior.txt"));
    });
  if (r.mode == RunMode::GenerateOnly) return;

  const fs::path ckpt = "checkpoints/flow.ckpt";
  FlowModel flow;
  if (r.train()) {
    flow = FlowModel::create(cfg.flow, derive_seed(cfg.root_seed, "flow_init", 0));
    TrainConfig tc = cfg.flow_train;
    tc.seed = derive_seed(cfg.root_seed, "flow_train", 0);
    if (tc.checkpoints.empty() && tc.epochs > 0) {
      for (int e = 10; e < tc.epochs; e += 10) tc.checkpoints.push_back(e);
      tc.checkpoints.push_back(tc.epochs);
    }
    const auto trace = r.step("train:flow", [&] {
      return train_flow(flow, cfg.ring, cfg.flow_tasks_per_epoch, tc, cfg.flow_data);
    });
    flow.save(r.out(ckpt));
    io::CsvWriter w(r.out("flow_trace.csv"), Header{"epoch", "train_loss", "validation_loss"});
    for (const auto& t : trace) w.field(t.epoch).field(t.train_loss).field(t.heldout_mse).end_row();
  } else {
    flow = r.step("load:flow", [&] {
      if (!fs::exists(r.dir / ckpt)) throw ValidationError("missing " + (r.dir / ckpt).string() + "; run train first");
      return FlowModel::load(r.dir / ckpt);
    });
  }
  if (!r.evaluate()) return;

  io::CsvWriter samples_csv(r.out("posterior_samples.csv"),
                            Header{"method", "beta1", "beta2", "sample_index", "task_id", "seed"});
  io::CsvWriter coverage_csv(r.out("coverage.csv"), Header{"task_id", "method", "mode", "share", "exact_weight"});
  io::CsvWriter energy_csv(r.out("energy.csv"),
                           Header{"task_id", "method", "n_obs", "energy", "null_q95", "n_samples", "within_null"});

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& [id, task] = tasks[i];
    const GaussianMixture exact = r.step("evaluate:" + id + ":exact", [&] {
      GaussianMixture g = exact_ring_posterior(task, cfg.ring);
      g.save(r.out("posterior_" + id + ".txt"));
      return g;
    });
    const std::uint64_t s_exact = derive_seed(cfg.root_seed, "exact_samples", i);
    const std::uint64_t s_flow = derive_seed(cfg.root_seed, "flow_samples", i);
    const std::uint64_t s_mcmc = derive_seed(cfg.root_seed, "mcmc", i);

    std::vector<std::tuple<std::string, Eigen::MatrixXd, std::uint64_t>> draws;
    r.step("evaluate:" + id + ":sample", [&] {
      draws.emplace_back("exact", sample_mixture(exact, cfg.ring_samples, s_exact), s_exact);
      draws.emplace_back("flow", sample_posterior(flow, task, cfg.ring_samples, cfg.ode, s_flow), s_flow);
      const McmcResult mc = rw_metropolis(ring_log_posterior(task, cfg.ring), bench_mcmc(cfg, s_mcmc));
      r.metric("mcmc", "-", "acceptance:" + id, mc.acceptance_rate, 1, s_mcmc);
      draws.emplace_back("mcmc", mc.samples, s_mcmc);
    });
    for (const auto& [method, s, seed] : draws) {
      for (Eigen::Index k = 0; k < s.rows(); ++k)
        samples_csv.field(method).field(s(k, 0)).field(s(k, 1)).field(static_cast<long long>(k)).field(id).field(
            std::to_string(seed)).end_row();
      const Eigen::VectorXd share = mode_coverage(s, exact);
      for (Eigen::Index k = 0; k < share.size(); ++k)
        coverage_csv.field(id).field(method).field(static_cast<long long>(k)).field(share(k)).field(exact.weights(k)).end_row();
    }
    r.step("evaluate:" + id + ":energy", [&] {
      const std::size_t n = cfg.energy_samples;
      const double q95 = energy_null_quantile(exact, n, n, cfg.energy_resamples, 0.95,
                                              derive_seed(cfg.root_seed, "energy_null", i));
      const Eigen::MatrixXd ref = sample_mixture(exact, n, derive_seed(cfg.root_seed, "energy_ref", i));
      for (const auto& [method, s, seed] : draws) {
        if (method == "exact") continue;
        const double e = energy_distance(thin(s, n), ref);
        energy_csv.field(id).field(method).field(static_cast<long long>(task.n_obs())).field(e).field(q95).field(n).field(
            e <= q95 ? "1" : "0").end_row();
        r.metric(method, "-", "energy:" + id, e, 1, seed);
      }
    });
  }

  r.step("evaluate:trajectory", [&] {
    const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
    const auto traj = flow_trajectory(flow, tasks[1].task, cfg.trajectory_particles, times, cfg.ode,
                                      derive_seed(cfg.root_seed, "trajectory", 0));
    io::CsvWriter w(r.out("trajectory.csv"), Header{"t", "particle_id", "beta1", "beta2"});
    for (std::size_t k = 0; k < times.size(); ++k)
      for (Eigen::Index j = 0; j < traj[k].rows(); ++j)
        w.field(times[k]).field(static_cast<long long>(j)).field(traj[k](j, 0)).field(traj[k](j, 1)).end_row();
  });

  r.step("bench", [&] {
    const BenchSummary b = bench_timing(cfg, flow, cfg.bench_tasks, r.out("timing.csv"));
    r.metric("flow", "-", "median_wall_ms", b.flow_median_ms, cfg.bench_tasks, 0);
    r.metric("mcmc", "-", "median_wall_ms", b.mcmc_median_ms, cfg.bench_tasks, 0);
  });
}

struct FigureSource {
  std::string id;
  std::string file;
  Header columns;
};

const std::vector<FigureSource>& figure_sources() {
  static const std::vector<FigureSource> sources{
      {"table1", "table1.csv", {}},
      {"table2", "table2.csv", {"model", "regime", "epoch", "mse"}},
      {"learning_dynamics", "learning_dynamics.csv", {"model", "split", "epoch", "mse"}},
      {"bootstrap", "bootstrap.csv", {"model", "regime", "N", "sigma_boot"}},
      {"sparse_cosine", "sparse_cosine.csv", {"epoch", "level", "cosine"}},
      {"sparse_bootstrap", "sparse_bootstrap.csv", {"level", "N", "sigma_boot"}},
      {"posterior_samples", "posterior_samples.csv", {"method", "beta1", "beta2", "sample_index", "task_id"}},
      {"flow_trajectory", "trajectory.csv", {"t", "particle_id", "beta1", "beta2"}},
  };
  return sources;
}

}  // namespace

void RunManifest::write(const fs::path& path) const {
  nlohmann::ordered_json j;
  j["experiment"] = experiment;
  j["code_version"] = code_version;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["status"] = complete ? "complete" : "incomplete";
  if (!complete) {
    j["failed_stage"] = failed_stage;
    j["error"] = error;
  }
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) c[k] = v;
  j["config"] = c;
  nlohmann::ordered_json env = nlohmann::ordered_json::object();
  for (const auto& [k, v] : environment) env[k] = v;
  j["environment"] = env;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) j["artifacts"].push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> figure_ids() {
  std::vector<std::string> ids;
  for (const auto& s : figure_sources()) ids.push_back(s.id);
  return ids;
}

fs::path emit_figure_data(const fs::path& run_dir, const std::string& figure_id) {
  const auto& sources = figure_sources();
  const auto it = std::find_if(sources.begin(), sources.end(), [&](const auto& s) { return s.id == figure_id; });
  if (it == sources.end()) throw ValidationError("unknown figure id '" + figure_id + "'");
  const fs::path src = run_dir / it->file;
  if (!fs::exists(src)) throw ValidationError("figure '" + figure_id + "' needs " + src.string());
  const io::CsvTable table = io::read_csv(src);
  const Header cols = it->columns.empty() ? table.header : it->columns;
  std::vector<std::size_t> idx;
  for (const auto& c : cols) idx.push_back(table.column(c));
  const fs::path dst = run_dir / "figures" / (figure_id + ".csv");
  fs::create_directories(dst.parent_path());
  io::CsvWriter w(dst, cols);
  for (const auto& row : table.rows) {
    for (std::size_t i : idx) w.field(row.at(i));
    w.end_row();
  }
  return dst;
}

ReproduceTarget reproduce_target(const std::string& name) {
  static const std::map<std::string, ReproduceTarget> targets{
      {"table1", {ExperimentKind::LatentStructure, "table1"}},
      {"table2", {ExperimentKind::Robustness, "table2"}},
      {"fig1", {ExperimentKind::Robustness, "learning_dynamics"}},
      {"fig2", {ExperimentKind::Robustness, "bootstrap"}},
      {"fig3", {ExperimentKind::SparseRecovery, "sparse_cosine"}},
      {"table4", {ExperimentKind::SparseRecovery, "sparse_bootstrap"}},
      {"fig4", {ExperimentKind::RingPosterior, "posterior_samples"}},
      {"fig5", {ExperimentKind::RingPosterior, "flow_trajectory"}},
  };
  const auto it = targets.find(name);
  if (it == targets.end()) throw ValidationError("unknown reproduce target '" + name + "'");
  return it->second;
}

BenchSummary bench_timing(const ExperimentConfig& cfg, const FlowModel& flow, std::size_t n_tasks,
                          const fs::path& csv_path) {
  using clock = std::chrono::steady_clock;
  BenchSummary summary;
  std::vector<double> flow_ms, mcmc_ms;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const Task task = gen_ring_task(cfg.ring, cfg.ring_n_obs, derive_seed(cfg.root_seed, "bench_task", i));
    const auto t0 = clock::now();
    const Eigen::MatrixXd fs_ = sample_posterior(flow, task, cfg.ring_samples, cfg.ode,
                                                 derive_seed(cfg.root_seed, "bench_flow", i));
    const auto t1 = clock::now();
    const McmcResult mc = rw_metropolis(ring_log_posterior(task, cfg.ring),
                                        bench_mcmc(cfg, derive_seed(cfg.root_seed, "bench_mcmc", i)));
    const auto t2 = clock::now();
    const double f = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double m = std::chrono::duration<double, std::milli>(t2 - t1).count();
    summary.rows.push_back({"flow", i, f, static_cast<std::size_t>(fs_.rows())});
    summary.rows.push_back({"mcmc", i, m, static_cast<std::size_t>(mc.samples.rows())});
    flow_ms.push_back(f);
    mcmc_ms.push_back(m);
  }
  summary.flow_median_ms = median(flow_ms);
  summary.mcmc_median_ms = median(mcmc_ms);
  if (!csv_path.empty()) {
    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    io::CsvWriter w(csv_path, Header{"method", "task_id", "wall_ms", "n_samples"});
    for (const auto& row : summary.rows)
      w.field(row.method).field(row.task_id).field(row.wall_ms).field(row.n_samples).end_row();
  }
  return summary;
}

RunManifest run_experiment(const ExperimentConfig& cfg, RunMode mode, const std::vector<std::string>& figures) {
  cfg.validate();
  for (const auto& f : figures) {
    const auto ids = figure_ids();
    require(std::find(ids.begin(), ids.end(), f) != ids.end(), "unknown figure id '" + f + "'");
  }
  RunManifest manifest;
  manifest.experiment = experiment_name(cfg.experiment);
  manifest.code_version = code_version();
  manifest.started_at = utc_now();
  manifest.config = cfg.snapshot();
  manifest.environment = {
      {"compiler", __VERSION__},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"hardware_threads", std::to_string(std::thread::hardware_concurrency())},
      {"threads_used", "1"},
  };

  Run run(cfg, mode);
  fs::create_directories(run.dir);
  auto seal = [&] {
    manifest.finished_at = utc_now();
    manifest.artifacts.clear();
    for (const auto& rel : run.produced) {
      const fs::path p = run.dir / rel;
      if (!fs::exists(p)) continue;
      manifest.artifacts.push_back({rel.generic_string(), io::sha256_file(p), fs::file_size(p)});
    }
    manifest.write(run.dir / "manifest.json");
  };
  try {
    switch (cfg.experiment) {
      case ExperimentKind::LatentStructure: run_latent(run); break;
      case ExperimentKind::Robustness: run_robust(run); break;
      case ExperimentKind::SparseRecovery: run_sparse(run); break;
      case ExperimentKind::RingPosterior: run_ring(run); break;
    }
    run.step("write:metrics", [&] { run.finish_metrics(); });
    for (const auto& f : figures)
      run.step("figure:" + f, [&] {
        const fs::path p = emit_figure_data(run.dir, f);
        run.produced.push_back(fs::relative(p, run.dir));
      });
  } catch (const std::exception& e) {
    manifest.complete = false;
    manifest.failed_stage = run.stage;
    manifest.error = e.what();
    seal();
    throw StageError(run.stage, e.what());
  }
  manifest.complete = true;
  seal();
  return manifest;
}

}  // namespace amortlab
