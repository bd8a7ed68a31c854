#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "amortlab/task_gen.hpp"

namespace amortlab {

enum class PoolKind { Sum, Mean };

enum class LossKind {
  ParamMSE,       // ||beta_hat - beta||^2
  PredictiveMSE,  // (1/N) sum_n (y_n - x_n' beta_hat)^2
};

/// Fixed (non-trained) affine standardization of tokens and rescaling of the output.
struct TokenScaling {
  Eigen::RowVectorXd shift;  // width p+1
  Eigen::RowVectorXd scale;
  double out_scale = 1.0;
  double set_size = 1.0;  // sum pooling divides by this fixed constant

  static TokenScaling identity(Eigen::Index token_width);
  /// Token moments over every training row; out_scale = sqrt(mean(y^2) / p); set_size = mean rows per task.
  static TokenScaling fit(std::span<const Task> tasks);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& tokens) const;
};

// Pooling sums rows in lexicographic order of the raw tokens so that shuffling a task's rows
// leaves the pooled vector bit-identical.
std::vector<Eigen::Index> canonical_order(const Eigen::MatrixXd& tokens);
Eigen::RowVectorXd pool_rows(const Eigen::MatrixXd& h, std::span<const Eigen::Index> order,
                             PoolKind pool);

struct SparseHeadOutput {
  Eigen::VectorXd magnitude;
  Eigen::VectorXd gate_prob;
  Eigen::VectorXd beta_soft;
  Eigen::VectorXd beta_hard;
};

inline constexpr double kGateFloor = 1e-6;

/// Splits a raw 2p head output into magnitude and clamped logistic gate.
SparseHeadOutput sparse_head(const Eigen::VectorXd& magnitude, const Eigen::VectorXd& gate_logit);
SparseHeadOutput gate_outputs(const Eigen::VectorXd& magnitude, const Eigen::VectorXd& gate_prob);

/// Loss of one task's estimate and its gradient w.r.t. the estimate.
double task_loss(const Task& task, const Eigen::VectorXd& beta_hat, LossKind loss,
                 Eigen::VectorXd& grad_beta);

}  // namespace amortlab
