#include "amortlab/nn/optimizer.hpp"

#include <cmath>

#include "amortlab/error.hpp"

namespace amortlab::nn {

OptimizerState OptimizerState::for_size(Eigen::Index n, double learning_rate) {
  OptimizerState s;
  s.first_moment = Eigen::VectorXd::Zero(n);
  s.second_moment = Eigen::VectorXd::Zero(n);
  s.learning_rate = learning_rate;
  return s;
}

void optimizer_step(OptimizerState& state, Eigen::Ref<Eigen::VectorXd> params,
                    const Eigen::VectorXd& grads) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw DimensionError("optimizer buffers do not match the parameter vector");
  ++state.step_count;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon_stab);
}

void clip_global_norm(Eigen::VectorXd& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = grads.norm();
  if (norm > max_norm) grads *= max_norm / norm;
}

}  // namespace amortlab::nn
