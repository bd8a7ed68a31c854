#pragma once

#include <Eigen/Core>

namespace amortlab::nn {

/// Adaptive-moment (Adam) state for one flat parameter vector.
struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_stab = 1e-8;

  static OptimizerState for_size(Eigen::Index n, double learning_rate = 1e-3);
};

/// One bias-corrected Adam update of `params` in place.
void optimizer_step(OptimizerState& state, Eigen::Ref<Eigen::VectorXd> params,
                    const Eigen::VectorXd& grads);

/// Rescales grads so their Euclidean norm is at most max_norm (no-op when max_norm <= 0).
void clip_global_norm(Eigen::VectorXd& grads, double max_norm);

}  // namespace amortlab::nn
