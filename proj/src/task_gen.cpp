#include "amortlab/task_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "amortlab/error.hpp"
#include "amortlab/io.hpp"

namespace amortlab {

namespace {

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Eigen::VectorXd regime_noise(const NoiseRegime& regime, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd eps(n);
  for (Eigen::Index i = 0; i < n; ++i) eps(i) = regime.sample(rng);
  return eps;
}

MetaDataset assemble(std::vector<Task> tasks, std::size_t n_test, std::uint64_t seed,
                     std::string tag) {
  require(n_test <= tasks.size(), "n_test exceeds the number of tasks");
  MetaDataset meta;
  meta.n_train = tasks.size() - n_test;
  meta.n_test = n_test;
  meta.tasks = std::move(tasks);
  meta.global_seed = seed;
  meta.spec_tag = std::move(tag);
  return meta;
}

}  // namespace

Eigen::MatrixXd task_tokens(const Task& task) {
  Eigen::MatrixXd tokens(task.n_obs(), task.inputs.cols() + 1);
  tokens.leftCols(task.inputs.cols()) = task.inputs;
  tokens.rightCols(1) = task.outputs;
  return tokens;
}

Task permute_rows(const Task& task, std::span<const Eigen::Index> order) {
  require(static_cast<Eigen::Index>(order.size()) == task.n_obs(), "permutation size mismatch");
  Task out = task;
  for (Eigen::Index i = 0; i < task.n_obs(); ++i) {
    out.inputs.row(i) = task.inputs.row(order[static_cast<std::size_t>(i)]);
    out.outputs(i) = task.outputs(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

// --- clustered prior ---------------------------------------------------------

void ClusteredPriorSpec::validate() const {
  require(p >= 1, "clustered prior: p must be >= 1");
  require(K >= 1, "clustered prior: K must be >= 1");
  require(tau >= 0.0 && std::isfinite(tau), "clustered prior: tau must be finite and >= 0");
  require(sigma_noise > 0.0, "clustered prior: sigma_noise must be > 0");
  require(n_obs_min >= 1 && n_obs_min <= n_obs_max, "clustered prior: bad n_obs range");
  require(centroids.rows() == K && centroids.cols() == p,
          "clustered prior: centroids must be K x p");
}

ClusteredPriorSpec make_clustered_prior(int p, int K, double tau, double sigma_noise,
                                        int n_obs_min, int n_obs_max, std::uint64_t seed) {
  ClusteredPriorSpec spec;
  spec.p = p;
  spec.K = K;
  spec.tau = tau;
  spec.sigma_noise = sigma_noise;
  spec.n_obs_min = n_obs_min;
  spec.n_obs_max = n_obs_max;
  require(p >= 1 && K >= 1, "clustered prior: p and K must be >= 1");
  Rng rng(derive_seed(seed, "centroids", 0));
  spec.centroids = tau * standard_normal(rng, K, p);
  spec.validate();
  return spec;
}

Task gen_clustered_task(const ClusteredPriorSpec& spec, std::uint64_t task_seed) {
  Rng rng(task_seed);
  Task task;
  const int k = uniform_int(rng, 0, spec.K - 1);
  const int n = uniform_int(rng, spec.n_obs_min, spec.n_obs_max);
  task.beta_true = spec.centroids.row(k).transpose();
  task.inputs = standard_normal(rng, n, spec.p);
  task.outputs = task.inputs * task.beta_true +
                 spec.sigma_noise * standard_normal(rng, n, 1).col(0);
  task.regime_tag = "gaussian";
  task.task_seed = task_seed;
  return task;
}

MetaDataset gen_clustered_meta(const ClusteredPriorSpec& spec, std::size_t n_tasks,
                               std::uint64_t seed, std::size_t n_test) {
  spec.validate();
  require(n_tasks >= 1, "n_tasks must be >= 1");
  std::vector<Task> tasks(n_tasks);
  for (std::size_t i = 0; i < n_tasks; ++i)
    tasks[i] = gen_clustered_task(spec, derive_seed(seed, "task", i));
  return assemble(std::move(tasks), n_test, seed, "clustered");
}

// --- noise regimes ------------------------------------------------------------

NoiseRegime NoiseRegime::gaussian() { return {NoiseKind::Gaussian, {1.0}, {0.0}, {1.0}}; }

NoiseRegime NoiseRegime::asymmetric() { return {NoiseKind::Asymmetric, {1.0}, {-1.0}, {1.0}}; }

NoiseRegime NoiseRegime::bimodal() {
  NoiseRegime r{NoiseKind::Bimodal, {0.8, 0.2}, {-1.0, 4.0}, {1.0, 0.5}};
  const double m = r.mean();
  for (double& mu : r.mixture_means) mu -= m;
  return r;
}

NoiseRegime NoiseRegime::trimodal() {
  NoiseRegime r{NoiseKind::Trimodal, {0.8, 0.1, 0.1}, {0.0, -5.0, 5.0}, {1.0, 0.7, 0.7}};
  const double m = r.mean();
  for (double& mu : r.mixture_means) mu -= m;
  return r;
}

NoiseRegime NoiseRegime::from_name(const std::string& name) {
  if (name == "gaussian") return gaussian();
  if (name == "asymmetric") return asymmetric();
  if (name == "bimodal") return bimodal();
  if (name == "trimodal") return trimodal();
  throw ValidationError("unknown noise regime '" + name + "'");
}

std::vector<NoiseRegime> all_noise_regimes() {
  return {NoiseRegime::gaussian(), NoiseRegime::asymmetric(), NoiseRegime::bimodal(),
          NoiseRegime::trimodal()};
}

void NoiseRegime::validate() const {
  require(!mixture_weights.empty(), "noise regime: no components");
  require(mixture_weights.size() == mixture_means.size() &&
              mixture_means.size() == mixture_sds.size(),
          "noise regime: component vectors differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < mixture_weights.size(); ++i) {
    require(mixture_weights[i] >= 0.0, "noise regime: negative weight");
    require(mixture_sds[i] > 0.0, "noise regime: sds must be > 0");
    total += mixture_weights[i];
  }
  require(std::abs(total - 1.0) < 1e-12, "noise regime: weights must sum to 1");
  require(std::abs(mean()) < 1e-12, "noise regime: mean must be 0");
}

double NoiseRegime::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < mixture_weights.size(); ++i) {
    const double comp = kind == NoiseKind::Asymmetric ? mixture_means[i] + mixture_sds[i]
                                                      : mixture_means[i];
    m += mixture_weights[i] * comp;
  }
  return m;
}

double NoiseRegime::variance() const {
  // Exp(1) scaled by s has variance s^2, same as a Gaussian with sd s.
  double second = 0.0;
  for (std::size_t i = 0; i < mixture_weights.size(); ++i) {
    const double mu = kind == NoiseKind::Asymmetric ? mixture_means[i] + mixture_sds[i]
                                                    : mixture_means[i];
    second += mixture_weights[i] * (mixture_sds[i] * mixture_sds[i] + mu * mu);
  }
  const double m = mean();
  return second - m * m;
}

double NoiseRegime::sample(Rng& rng) const {
  std::size_t c = 0;
  if (mixture_weights.size() > 1) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    c = mixture_weights.size() - 1;
    for (std::size_t i = 0; i < mixture_weights.size(); ++i) {
      acc += mixture_weights[i];
      if (u < acc) {
        c = i;
        break;
      }
    }
  }
  if (kind == NoiseKind::Asymmetric)
    return mixture_means[c] + mixture_sds[c] * std::exponential_distribution<double>(1.0)(rng);
  return mixture_means[c] + mixture_sds[c] * std::normal_distribution<double>(0.0, 1.0)(rng);
}

std::string NoiseRegime::tag() const {
  switch (kind) {
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::Asymmetric: return "asymmetric";
    case NoiseKind::Bimodal: return "bimodal";
    case NoiseKind::Trimodal: return "trimodal";
  }
  return "unknown";
}

// --- robustness family -------------------------------------------------------------

void RobustTaskSpec::validate() const {
  require(p >= 1, "robust spec: p must be >= 1");
  require(prior_sd > 0.0, "robust spec: prior_sd must be > 0");
  require(n_obs_min >= 1 && n_obs_min <= n_obs_max, "robust spec: bad n_obs range");
}

Task gen_robust_task(const RobustTaskSpec& spec, const NoiseRegime& regime,
                     std::uint64_t task_seed) {
  // Design and coefficients come from the task stream and noise from its own stream, so the
  // same seed yields identical (beta, X) under every regime.
  Rng rng(task_seed);
  Task task;
  const int n = uniform_int(rng, spec.n_obs_min, spec.n_obs_max);
  task.beta_true = spec.prior_sd * standard_normal(rng, spec.p, 1).col(0);
  task.inputs = standard_normal(rng, n, spec.p);
  task.outputs = task.inputs * task.beta_true + regime_noise(regime, n, derive_seed(task_seed, "noise", 0));
  task.regime_tag = regime.tag();
  task.task_seed = task_seed;
  return task;
}

MetaDataset gen_robust_meta(const RobustTaskSpec& spec, const NoiseRegime& regime,
                            std::size_t n_tasks, std::uint64_t seed, std::size_t n_test) {
  spec.validate();
  regime.validate();
  require(n_tasks >= 1, "n_tasks must be >= 1");
  std::vector<Task> tasks(n_tasks);
  for (std::size_t i = 0; i < n_tasks; ++i)
    tasks[i] = gen_robust_task(spec, regime, derive_seed(seed, "task", i));
  return assemble(std::move(tasks), n_test, seed, "robust:" + regime.tag());
}

// --- sparse family -------------------------------------------------------------------

void SparseTaskSpec::validate() const {
  require(p >= 1, "sparse spec: p must be >= 1");
  require(sparsity_percent >= 0 && sparsity_percent <= 100, "sparse spec: level outside [0,100]");
  require(coef_sd > 0.0, "sparse spec: coef_sd must be > 0");
  require(noise_sd > 0.0, "sparse spec: noise_sd must be > 0");
  require(n_obs_min >= 1 && n_obs_min <= n_obs_max, "sparse spec: bad n_obs range");
}

int SparseTaskSpec::support_size(int level) const {
  return static_cast<int>(std::lround(p * (1.0 - level / 100.0)));
}

Task gen_sparse_task(const SparseTaskSpec& spec, int level, std::uint64_t task_seed) {
  require(level >= 0 && level <= 100, "sparsity level outside [0,100]");
  Rng rng(task_seed);
  Task task;
  const int n = uniform_int(rng, spec.n_obs_min, spec.n_obs_max);
  std::vector<int> idx(static_cast<std::size_t>(spec.p));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int s = spec.support_size(level);
  task.beta_true = Eigen::VectorXd::Zero(spec.p);
  std::normal_distribution<double> normal(0.0, spec.coef_sd);
  for (int j = 0; j < s; ++j) task.beta_true(idx[static_cast<std::size_t>(j)]) = normal(rng);
  task.inputs = standard_normal(rng, n, spec.p);
  task.outputs = task.inputs * task.beta_true + spec.noise_sd * standard_normal(rng, n, 1).col(0);
  task.regime_tag = "gaussian";
  task.task_seed = task_seed;
  task.sparsity_level = level;
  return task;
}

MetaDataset gen_sparse_meta(const SparseTaskSpec& spec, std::size_t tasks_per_level,
                            std::span<const int> levels, std::uint64_t seed, std::size_t n_test) {
  spec.validate();
  for (int level : levels) require(level >= 0 && level <= 100, "sparsity level outside [0,100]");
  require(tasks_per_level >= 1 && !levels.empty(), "sparse meta: need at least one task");
  std::vector<Task> tasks;
  tasks.reserve(tasks_per_level * levels.size());
  std::size_t i = 0;
  for (int level : levels)
    for (std::size_t j = 0; j < tasks_per_level; ++j, ++i)
      tasks.push_back(gen_sparse_task(spec, level, derive_seed(seed, "task", i)));
  Rng shuffle_rng(derive_seed(seed, "split", 0));
  std::shuffle(tasks.begin(), tasks.end(), shuffle_rng);
  return assemble(std::move(tasks), n_test, seed, "sparse");
}

// --- ring family -----------------------------------------------------------------------

void RingPriorSpec::validate() const {
  require(K >= 1, "ring spec: K must be >= 1");
  require(radius > 0.0, "ring spec: radius must be > 0");
  require(component_sd > 0.0, "ring spec: component_sd must be > 0");
  require(obs_noise_sd > 0.0, "ring spec: obs_noise_sd must be > 0");
}

std::vector<Eigen::Vector2d> ring_means(const RingPriorSpec& spec) {
  std::vector<Eigen::Vector2d> means;
  means.reserve(static_cast<std::size_t>(spec.K));
  for (int k = 0; k < spec.K; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / spec.K;
    means.emplace_back(spec.radius * std::cos(angle), spec.radius * std::sin(angle));
  }
  return means;
}

Task gen_ring_task(const RingPriorSpec& spec, int n_obs, std::uint64_t seed) {
  spec.validate();
  require(n_obs >= 0, "ring task: n_obs must be >= 0");
  Rng rng(seed);
  const auto means = ring_means(spec);
  const int k = uniform_int(rng, 0, spec.K - 1);
  Task task;
  task.beta_true = means[static_cast<std::size_t>(k)] +
                   spec.component_sd * standard_normal(rng, 2, 1).col(0);
  task.inputs = standard_normal(rng, n_obs, 2);
  task.outputs = task.inputs * task.beta_true +
                 spec.obs_noise_sd * standard_normal(rng, n_obs, 1).col(0);
  task.regime_tag = "gaussian";
  task.task_seed = seed;
  return task;
}

Task simulate_linear_task(const Eigen::VectorXd& beta, int n_obs, const NoiseRegime& regime,
                          std::uint64_t seed) {
  require(n_obs >= 0, "n_obs must be >= 0");
  Rng rng(seed);
  Task task;
  task.beta_true = beta;
  task.inputs = standard_normal(rng, n_obs, beta.size());
  task.outputs = task.inputs * beta + regime_noise(regime, n_obs, derive_seed(seed, "noise", 0));
  task.regime_tag = regime.tag();
  task.task_seed = seed;
  return task;
}

// --- persistence --------------------------------------------------------------------------

namespace {

std::string task_file_name(std::size_t i) {
  std::string digits = std::to_string(i);
  return "task_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits + ".csv";
}

}  // namespace

void save_meta_dataset(const MetaDataset& meta, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["spec_tag"] = meta.spec_tag;
  manifest["global_seed"] = meta.global_seed;
  manifest["n_train"] = meta.n_train;
  manifest["n_test"] = meta.n_test;
  manifest["layout"] =
      "header x1..xp,y; first row beta_true with empty y; then n_obs rows of x1..xp,y";
  auto& list = manifest["tasks"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < meta.tasks.size(); ++i) {
    const Task& t = meta.tasks[i];
    const Eigen::Index p = t.dim();
    std::vector<std::string> header;
    for (Eigen::Index j = 0; j < p; ++j) header.push_back("x" + std::to_string(j + 1));
    header.emplace_back("y");
    const auto name = task_file_name(i);
    {
      io::CsvWriter w(dir / name, header);
      for (Eigen::Index j = 0; j < p; ++j) w.field(t.beta_true(j));
      w.field(std::string_view{});
      w.end_row();
      for (Eigen::Index n = 0; n < t.n_obs(); ++n) {
        for (Eigen::Index j = 0; j < p; ++j) w.field(t.inputs(n, j));
        w.field(t.outputs(n));
        w.end_row();
      }
    }
    list.push_back({{"file", name},
                    {"split", i < meta.n_train ? "train" : "test"},
                    {"task_seed", t.task_seed},
                    {"n_obs", t.n_obs()},
                    {"regime", t.regime_tag},
                    {"sparsity_level", t.sparsity_level}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

MetaDataset load_meta_dataset(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  MetaDataset meta;
  meta.spec_tag = manifest.at("spec_tag").get<std::string>();
  meta.global_seed = manifest.at("global_seed").get<std::uint64_t>();
  meta.n_train = manifest.at("n_train").get<std::size_t>();
  meta.n_test = manifest.at("n_test").get<std::size_t>();
  for (const auto& entry : manifest.at("tasks")) {
    const auto table = io::read_csv(dir / entry.at("file").get<std::string>());
    require(!table.rows.empty(), "task file has no beta row");
    const auto p = static_cast<Eigen::Index>(table.header.size()) - 1;
    Task t;
    t.beta_true.resize(p);
    for (Eigen::Index j = 0; j < p; ++j)
      t.beta_true(j) = io::parse_double(table.rows[0][static_cast<std::size_t>(j)]);
    const auto n = static_cast<Eigen::Index>(table.rows.size()) - 1;
    t.inputs.resize(n, p);
    t.outputs.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& row = table.rows[static_cast<std::size_t>(r + 1)];
      require(static_cast<Eigen::Index>(row.size()) == p + 1, "task file row has wrong width");
      for (Eigen::Index j = 0; j < p; ++j) t.inputs(r, j) = io::parse_double(row[static_cast<std::size_t>(j)]);
      t.outputs(r) = io::parse_double(row[static_cast<std::size_t>(p)]);
    }
    t.task_seed = entry.at("task_seed").get<std::uint64_t>();
    t.regime_tag = entry.at("regime").get<std::string>();
    t.sparsity_level = entry.at("sparsity_level").get<int>();
    meta.tasks.push_back(std::move(t));
  }
  require(meta.tasks.size() == meta.n_train + meta.n_test, "manifest counts disagree with tasks");
  return meta;
}

}  // namespace amortlab
