#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "amortlab/estimators/deep_sets.hpp"
#include "amortlab/estimators/set_transformer.hpp"

namespace amortlab {

enum class EstimatorKind { DeepSets, SetTransformer, SparseSetTransformer };

std::string estimator_kind_name(EstimatorKind kind);
EstimatorKind estimator_kind_from_name(const std::string& name);

/// Any of the amortized set-to-vector estimators behind one interface.
class Estimator {
 public:
  using Model = std::variant<DeepSetsModel, SetTransformerModel>;

  Estimator() = default;
  explicit Estimator(DeepSetsModel m) : model_(std::move(m)) {}
  explicit Estimator(SetTransformerModel m) : model_(std::move(m)) {}

  static Estimator deep_sets(const DeepSetsArch& arch, std::uint64_t seed);
  static Estimator set_transformer(const SetTransformerArch& arch, std::uint64_t seed);

  EstimatorKind kind() const;
  Eigen::Index p() const;
  bool is_sparse() const;

  /// beta_hat (soft estimate for the gated variant).
  Eigen::VectorXd predict(const Task& task) const;
  /// Hard-thresholded estimate for the gated variant; predict() otherwise.
  Eigen::VectorXd predict_hard(const Task& task) const;
  SparseHeadOutput predict_sparse(const Task& task) const;

  double loss_and_grad(const Task& task, LossKind loss, std::span<double> grad) const;

  const TokenScaling& scaling() const;
  void set_scaling(TokenScaling s);

  std::size_t parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  Model& model() { return model_; }
  const Model& model() const { return model_; }

  void save(const std::filesystem::path& path) const;
  static Estimator load(const std::filesystem::path& path);

 private:
  Model model_;
};

struct TrainConfig {
  int epochs = 50;
  int batch_tasks = 32;
  LossKind loss = LossKind::ParamMSE;
  std::vector<int> checkpoints;  // epochs (1-based) at which the trace is recorded
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  bool fit_scaling = true;
  // Relabel each training task with a random feature permutation and sign flip (applied to x and
  // beta together). Valid only when the task prior is exchangeable and sign-symmetric in beta.
  bool augment_symmetries = false;
  bool cosine_decay = false;  // anneal the step size to zero over the run

  /// Step size for an epoch (1-based) under the configured schedule.
  double learning_rate_at(int epoch) const;
  void validate() const;
};

struct TraceRow {
  int epoch = 0;
  double train_loss = 0.0;   // mean training loss over the epoch
  double heldout_mse = 0.0;  // MSE_beta on the held-out tasks (training tasks if none are held out)
};

using CheckpointHook = std::function<void(int epoch, const Estimator& model)>;

/// Minibatch Adam on the empirical Bayes risk. Tasks of unequal size are processed one at a time
/// and their gradients are reduced in task-index order.
std::vector<TraceRow> train_estimator(Estimator& model, const MetaDataset& meta,
                                      const TrainConfig& cfg, const CheckpointHook& hook = {});

enum class Metric { MseBeta, PredictiveMse, Cosine };

double evaluate_estimator(const Estimator& model, std::span<const Task> tasks, Metric metric);

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace,
                     bool append = false);

}  // namespace amortlab
