#include "amortlab/estimators/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "amortlab/error.hpp"

namespace amortlab {

TokenScaling TokenScaling::identity(Eigen::Index token_width) {
  return {Eigen::RowVectorXd::Zero(token_width), Eigen::RowVectorXd::Ones(token_width), 1.0, 1.0};
}

TokenScaling TokenScaling::fit(std::span<const Task> tasks) {
  require(!tasks.empty(), "cannot fit token scaling on zero tasks");
  const Eigen::Index width = tasks.front().dim() + 1;
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(width);
  Eigen::RowVectorXd sum_sq = Eigen::RowVectorXd::Zero(width);
  double rows = 0.0;
  for (const Task& t : tasks) {
    const Eigen::MatrixXd tok = task_tokens(t);
    sum += tok.colwise().sum();
    sum_sq += tok.array().square().matrix().colwise().sum();
    rows += static_cast<double>(tok.rows());
  }
  require(rows > 0.0, "cannot fit token scaling on empty tasks");
  TokenScaling s;
  s.shift = sum / rows;
  Eigen::RowVectorXd var = sum_sq / rows - s.shift.cwiseProduct(s.shift);
  s.scale = var.cwiseMax(1e-12).cwiseSqrt();
  const double mean_y2 = sum_sq(width - 1) / rows;
  s.out_scale = std::max(std::sqrt(mean_y2 / static_cast<double>(width - 1)), 1e-6);
  s.set_size = std::max(rows / static_cast<double>(tasks.size()), 1.0);
  return s;
}

Eigen::MatrixXd TokenScaling::apply(const Eigen::MatrixXd& tokens) const {
  if (tokens.cols() != shift.size()) throw DimensionError("token width does not match scaling");
  return ((tokens.rowwise() - shift).array().rowwise() / scale.array()).matrix();
}

std::vector<Eigen::Index> canonical_order(const Eigen::MatrixXd& tokens) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(tokens.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < tokens.cols(); ++j) {
      if (tokens(a, j) < tokens(b, j)) return true;
      if (tokens(b, j) < tokens(a, j)) return false;
    }
    return false;
  });
  return order;
}

Eigen::RowVectorXd pool_rows(const Eigen::MatrixXd& h, std::span<const Eigen::Index> order,
                             PoolKind pool) {
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(h.cols());
  for (Eigen::Index i : order) acc += h.row(i);
  if (pool == PoolKind::Mean && !order.empty()) acc /= static_cast<double>(order.size());
  return acc;
}

SparseHeadOutput gate_outputs(const Eigen::VectorXd& magnitude, const Eigen::VectorXd& gate_prob) {
  SparseHeadOutput out;
  out.magnitude = magnitude;
  out.gate_prob = gate_prob;
  out.beta_soft = magnitude.cwiseProduct(gate_prob);
  out.beta_hard = Eigen::VectorXd::Zero(magnitude.size());
  for (Eigen::Index j = 0; j < magnitude.size(); ++j)
    if (gate_prob(j) > 0.5) out.beta_hard(j) = magnitude(j);
  return out;
}

SparseHeadOutput sparse_head(const Eigen::VectorXd& magnitude, const Eigen::VectorXd& gate_logit) {
  Eigen::VectorXd prob(gate_logit.size());
  for (Eigen::Index j = 0; j < gate_logit.size(); ++j) {
    const double s = 1.0 / (1.0 + std::exp(-gate_logit(j)));
    prob(j) = std::clamp(s, kGateFloor, 1.0 - kGateFloor);
  }
  return gate_outputs(magnitude, prob);
}

double task_loss(const Task& task, const Eigen::VectorXd& beta_hat, LossKind loss,
                 Eigen::VectorXd& grad_beta) {
  switch (loss) {
    case LossKind::ParamMSE: {
      const Eigen::VectorXd diff = beta_hat - task.beta_true;
      grad_beta = 2.0 * diff;
      return diff.squaredNorm();
    }
    case LossKind::PredictiveMSE: {
      require(task.n_obs() >= 1, "predictive loss needs at least one observation");
      const double n = static_cast<double>(task.n_obs());
      const Eigen::VectorXd resid = task.outputs - task.inputs * beta_hat;
      grad_beta = (-2.0 / n) * (task.inputs.transpose() * resid);
      return resid.squaredNorm() / n;
    }
  }
  return 0.0;
}

}  // namespace amortlab
