#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Core>

#include "amortlab/nn/params.hpp"

namespace amortlab::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t n_parameters = 0;
  bool passed = false;
};

// Compares an analytic gradient against central differences over every parameter.
// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros (dead ReLUs)
// from dividing by zero.
template <class Model>
GradCheckResult grad_check(Model& model, const std::function<double(const Model&)>& loss_fn,
                           const Eigen::VectorXd& analytic, double tolerance,
                           double step = 1e-5, double floor = 1e-6) {
  Eigen::VectorXd theta = flatten(model);
  if (theta.size() != analytic.size()) throw DimensionError("analytic gradient has wrong size");
  GradCheckResult result;
  result.n_parameters = static_cast<std::size_t>(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta(i);
    theta(i) = saved + step;
    unflatten_into(model, theta);
    const double up = loss_fn(model);
    theta(i) = saved - step;
    unflatten_into(model, theta);
    const double down = loss_fn(model);
    theta(i) = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), floor});
    const double rel = std::abs(analytic(i) - numeric) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = static_cast<std::size_t>(i);
    }
  }
  unflatten_into(model, theta);
  result.passed = result.max_relative_error < tolerance;
  return result;
}

}  // namespace amortlab::nn
