#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "amortlab/estimators/deep_sets.hpp"
#include "amortlab/estimators/estimator.hpp"
#include "amortlab/nn/mlp.hpp"
#include "amortlab/task_gen.hpp"

namespace amortlab {

struct FlowArch {
  Eigen::Index d_ctx = 32;
  std::vector<Eigen::Index> encoder_hidden{64, 64};
  Eigen::Index encoder_latent = 64;
  std::vector<Eigen::Index> decoder_hidden{64};
  std::vector<Eigen::Index> velocity_hidden{128, 128, 128, 128};
};

// Context r = rho(sum_n phi([x_n; y_n])), zero-pooled for an empty task.
// Velocity v(t, z, r) takes the row [t, z1, z2, r].
class FlowModel {
 public:
  DeepSetsModel context_encoder;
  nn::Mlp velocity_net;

  static FlowModel create(const FlowArch& arch, std::uint64_t seed);

  Eigen::Index d_ctx() const { return context_encoder.decoder.out_width(); }
  Eigen::VectorXd context(const Task& task) const;

  std::size_t parameter_count() const {
    return context_encoder.parameter_count() + velocity_net.parameter_count();
  }
  template <class F>
  void visit_parameters(F&& f) {
    context_encoder.visit_parameters(f);
    velocity_net.visit_parameters(f);
  }
  template <class F>
  void visit_parameters(F&& f) const {
    context_encoder.visit_parameters(f);
    velocity_net.visit_parameters(f);
  }

  void save(const std::filesystem::path& path) const;
  static FlowModel load(const std::filesystem::path& path);
};

struct FlowBatch {
  Eigen::MatrixXd z0;  // B x 2, base draws
  Eigen::MatrixXd z1;  // B x 2, the paired tasks' beta_true
  Eigen::VectorXd t;   // B, in [0, 1]
  Eigen::MatrixXd zt;  // (1 - t) z0 + t z1

  static FlowBatch make(Eigen::MatrixXd z0, Eigen::MatrixXd z1, Eigen::VectorXd t);
  Eigen::Index size() const { return z0.rows(); }
};

/// Mean ||v(t, zt, r) - (z1 - z0)||^2. When grad is non-empty it receives the gradient
/// (layout of FlowModel::visit_parameters), overwriting its contents.
double cfm_loss(const FlowModel& model, const FlowBatch& batch, std::span<const Task> tasks,
                std::span<double> grad = {});

enum class OdeScheme { Euler, RK4 };

struct OdeConfig {
  int n_steps = 50;
  OdeScheme scheme = OdeScheme::RK4;
  void validate() const;
};

/// dz/dt = field(t, z) for a batch of states (one per row), integrated from t0 to t1.
using VectorField = std::function<Eigen::MatrixXd(double t, const Eigen::MatrixXd& z)>;
Eigen::MatrixXd integrate_ode(const VectorField& field, const Eigen::MatrixXd& z0,
                              const OdeConfig& ode, double t0 = 0.0, double t1 = 1.0);

/// The learned field for one task with the context contribution folded into the first layer.
VectorField conditioned_field(const FlowModel& model, const Task& task);

Eigen::Vector2d integrate_flow(const FlowModel& model, const Task& task, const Eigen::Vector2d& z0,
                               const OdeConfig& ode = {});

/// n independent base draws transported to t = 1; deterministic given seed.
Eigen::MatrixXd sample_posterior(const FlowModel& model, const Task& task, std::size_t n_samples,
                                 const OdeConfig& ode, std::uint64_t seed);

/// Particle positions at each requested time (sorted, within [0, 1]).
std::vector<Eigen::MatrixXd> flow_trajectory(const FlowModel& model, const Task& task,
                                             std::size_t n_particles, std::span<const double> times,
                                             const OdeConfig& ode, std::uint64_t seed);

struct FlowDataConfig {
  int n_obs_min = 0;
  int n_obs_max = 20;
};

/// Each epoch draws n_tasks fresh (beta, task) pairs from the ring model, fresh z0 ~ N(0, I)
/// and t ~ U[0, 1]. The trace records the mean training loss at cfg.checkpoints.
std::vector<TraceRow> train_flow(FlowModel& model, const RingPriorSpec& spec, std::size_t n_tasks,
                                 const TrainConfig& cfg, const FlowDataConfig& data = {});

}  // namespace amortlab
