#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "amortlab/baselines/baselines.hpp"
#include "amortlab/error.hpp"
#include "amortlab/estimators/estimator.hpp"
#include "amortlab/eval/metrics.hpp"
#include "amortlab/flow/flow.hpp"
#include "amortlab/harness/config.hpp"
#include "amortlab/harness/run.hpp"
#include "amortlab/rng.hpp"
#include "amortlab/task_gen.hpp"

namespace py = pybind11;
using namespace amortlab;

namespace {

Task make_task(Eigen::MatrixXd x, Eigen::VectorXd y, Eigen::VectorXd beta) {
  if (x.rows() != y.size()) throw DimensionError("inputs and outputs disagree on the number of rows");
  Task t;
  t.inputs = std::move(x);
  t.outputs = std::move(y);
  t.beta_true = beta.size() ? std::move(beta) : Eigen::VectorXd::Zero(t.inputs.cols());
  return t;
}

py::dict mixture_dict(const GaussianMixture& m) {
  py::dict d;
  d["weights"] = m.weights;
  d["means"] = m.means;
  d["covariances"] = m.covariances;
  return d;
}

py::dict manifest_dict(const RunManifest& m) {
  py::dict d;
  d["experiment"] = m.experiment;
  d["code_version"] = m.code_version;
  d["complete"] = m.complete;
  d["config"] = m.config;
  py::list arts;
  for (const auto& a : m.artifacts) arts.append(py::make_tuple(a.path, a.sha256, a.bytes));
  d["artifacts"] = arts;
  return d;
}

RunMode mode_from_name(const std::string& s) {
  if (s == "full") return RunMode::Full;
  if (s == "generate") return RunMode::GenerateOnly;
  if (s == "train") return RunMode::TrainOnly;
  if (s == "evaluate") return RunMode::EvaluateOnly;
  throw ValidationError("mode must be full, generate, train or evaluate");
}

}  // namespace

PYBIND11_MODULE(_amortlab, m) {
  m.doc() = "Amortized set-to-vector estimators, posterior flows and their experiment harness";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def("code_version", &code_version);
  m.def("derive_seed", [](std::uint64_t root, const std::string& stream, std::uint64_t index) {
    return derive_seed(root, stream, index);
  }, py::arg("root"), py::arg("stream"), py::arg("index") = 0);

  py::class_<Task>(m, "Task")
      .def(py::init(&make_task), py::arg("inputs"), py::arg("outputs"), py::arg("beta_true") = Eigen::VectorXd())
      .def_readwrite("inputs", &Task::inputs)
      .def_readwrite("outputs", &Task::outputs)
      .def_readwrite("beta_true", &Task::beta_true)
      .def_readonly("regime_tag", &Task::regime_tag)
      .def_readonly("task_seed", &Task::task_seed)
      .def_readonly("sparsity_level", &Task::sparsity_level)
      .def_property_readonly("n_obs", &Task::n_obs);

  m.def("gen_clustered_tasks", [](int p, int K, double tau, std::size_t n_tasks, std::uint64_t seed) {
    const ClusteredPriorSpec spec = make_clustered_prior(p, K, tau, 1.0, 10, 30, derive_seed(seed, "centroids", 0));
    return gen_clustered_meta(spec, n_tasks, seed).tasks;
  }, py::arg("p"), py::arg("K"), py::arg("tau"), py::arg("n_tasks"), py::arg("seed"));
  m.def("gen_robust_task", [](const std::string& regime, std::uint64_t seed) {
    return gen_robust_task(RobustTaskSpec{}, NoiseRegime::from_name(regime), seed);
  }, py::arg("regime"), py::arg("seed"));
  m.def("gen_sparse_task", [](int level, std::uint64_t seed) { return gen_sparse_task(SparseTaskSpec{}, level, seed); },
        py::arg("level"), py::arg("seed"));
  m.def("gen_ring_task", [](int n_obs, std::uint64_t seed) { return gen_ring_task(RingPriorSpec{}, n_obs, seed); },
        py::arg("n_obs"), py::arg("seed"));
  m.def("simulate_linear_task", [](const Eigen::VectorXd& beta, int n_obs, const std::string& regime, std::uint64_t seed) {
    return simulate_linear_task(beta, n_obs, NoiseRegime::from_name(regime), seed);
  }, py::arg("beta"), py::arg("n_obs"), py::arg("regime"), py::arg("seed"));

  m.def("ols_fit", &ols_fit, py::arg("task"));
  m.def("exact_ring_posterior", [](const Task& t) { return mixture_dict(exact_ring_posterior(t, RingPriorSpec{})); },
        py::arg("task"));
  m.def("sample_ring_posterior", [](const Task& t, std::size_t n, std::uint64_t seed) {
    return sample_mixture(exact_ring_posterior(t, RingPriorSpec{}), n, seed);
  }, py::arg("task"), py::arg("n"), py::arg("seed"));
  m.def("ring_mcmc", [](const Task& t, int n_steps, int burn_in, double proposal_sd, std::uint64_t seed) {
    McmcConfig c;
    c.n_steps = n_steps;
    c.burn_in = burn_in;
    c.proposal_sd = proposal_sd;
    c.seed = seed;
    const McmcResult r = rw_metropolis(ring_log_posterior(t, RingPriorSpec{}), c);
    return py::make_tuple(r.samples, r.acceptance_rate);
  }, py::arg("task"), py::arg("n_steps") = 20000, py::arg("burn_in") = 5000, py::arg("proposal_sd") = 0.8,
     py::arg("seed") = 0);

  m.def("mse_beta", [](const std::vector<Eigen::VectorXd>& est, const std::vector<Eigen::VectorXd>& truth) {
    return mse_beta(est, truth);
  }, py::arg("estimates"), py::arg("truths"));
  m.def("cosine_similarity", [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return cosine_similarity(a, b); });
  m.def("energy_distance", &energy_distance, py::arg("a"), py::arg("b"));
  m.def("bootstrap_stability", [](const std::function<Eigen::VectorXd(const Task&)>& est, const Eigen::VectorXd& beta,
                                  int n_obs, int replicates, const std::string& regime, std::uint64_t seed) {
    return bootstrap_stability(est, beta, n_obs, replicates, NoiseRegime::from_name(regime), seed).sigma_boot;
  }, py::arg("estimator"), py::arg("beta"), py::arg("n_obs"), py::arg("replicates"), py::arg("regime"), py::arg("seed"));

  py::class_<Estimator>(m, "Estimator")
      .def_static("deep_sets", [](int p, std::uint64_t seed) {
        DeepSetsArch a;
        a.p = p;
        return Estimator::deep_sets(a, seed);
      }, py::arg("p"), py::arg("seed") = 0)
      .def_static("set_transformer", [](int p, bool sparse, std::uint64_t seed) {
        SetTransformerArch a;
        a.p = p;
        a.sparse = sparse;
        return Estimator::set_transformer(a, seed);
      }, py::arg("p"), py::arg("sparse") = false, py::arg("seed") = 0)
      .def_static("load", &Estimator::load, py::arg("path"))
      .def("save", &Estimator::save, py::arg("path"))
      .def_property_readonly("kind", [](const Estimator& e) { return estimator_kind_name(e.kind()); })
      .def_property_readonly("parameter_count", &Estimator::parameter_count)
      .def("predict", &Estimator::predict, py::arg("task"))
      .def("predict_hard", &Estimator::predict_hard, py::arg("task"));

  py::class_<FlowModel>(m, "FlowModel")
      .def_static("load", &FlowModel::load, py::arg("path"))
      .def("context", &FlowModel::context, py::arg("task"))
      .def("sample", [](const FlowModel& f, const Task& t, std::size_t n, int steps, std::uint64_t seed) {
        return sample_posterior(f, t, n, OdeConfig{steps, OdeScheme::RK4}, seed);
      }, py::arg("task"), py::arg("n"), py::arg("steps") = 50, py::arg("seed") = 0);

  m.def("config_keys", &config_keys);
  m.def("run_experiment", [](const std::string& experiment, const std::string& profile,
                             const std::vector<std::pair<std::string, std::string>>& settings,
                             const std::string& mode, const std::vector<std::string>& figures) {
    ParsedConfigFile file;
    file.entries = settings;
    const ExperimentConfig cfg = load_config(file, experiment, profile);
    cfg.validate();
    RunManifest man;
    {
      py::gil_scoped_release release;
      man = run_experiment(cfg, mode_from_name(mode), figures);
    }
    return manifest_dict(man);
  }, py::arg("experiment"), py::arg("profile") = "desk", py::arg("settings") = std::vector<std::pair<std::string, std::string>>{},
     py::arg("mode") = "full", py::arg("figures") = std::vector<std::string>{});
  m.def("figure_ids", &figure_ids);
  m.def("emit_figure_data", &emit_figure_data, py::arg("run_dir"), py::arg("figure_id"));
}
