#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "amortlab/estimators/common.hpp"
#include "amortlab/nn/mlp.hpp"

namespace amortlab {

struct DeepSetsArch {
  Eigen::Index p = 20;
  std::vector<Eigen::Index> encoder_hidden{128, 128, 128};
  Eigen::Index latent = 128;
  std::vector<Eigen::Index> decoder_hidden{128, 128};
  PoolKind pool = PoolKind::Sum;
  Eigen::Index out_width = 0;  // 0 means p
};

// rho(pool_n phi([x_n; y_n])). Outputs are multiplied by scaling.out_scale.
class DeepSetsModel {
 public:
  nn::Mlp encoder;
  PoolKind pool = PoolKind::Sum;
  nn::Mlp decoder;
  TokenScaling scaling;

  struct Tape {
    nn::MlpTape encoder;
    nn::MlpTape decoder;
    std::vector<Eigen::Index> order;
  };

  static DeepSetsModel create(const DeepSetsArch& arch, Rng& rng);

  Eigen::Index p() const { return encoder.in_width() - 1; }

  /// Pooled latent of the (unscaled) token matrix; the zero vector for an empty set.
  Eigen::RowVectorXd pooled(const Eigen::MatrixXd& tokens) const;
  /// decoder(pooled), before out_scale.
  Eigen::VectorXd raw_output(const Eigen::MatrixXd& tokens) const;
  Eigen::VectorXd raw_output(const Eigen::MatrixXd& tokens, Tape& tape) const;
  /// Accumulates parameter gradients given dL/d raw_output.
  void backward(const Tape& tape, const Eigen::VectorXd& grad_raw, std::span<double> grad) const;

  Eigen::VectorXd predict(const Task& task) const;
  double loss_and_grad(const Task& task, LossKind loss, std::span<double> grad) const;

  std::size_t parameter_count() const {
    return encoder.parameter_count() + decoder.parameter_count();
  }
  template <class F>
  void visit_parameters(F&& f) {
    encoder.visit_parameters(f);
    decoder.visit_parameters(f);
  }
  template <class F>
  void visit_parameters(F&& f) const {
    encoder.visit_parameters(f);
    decoder.visit_parameters(f);
  }
};

/// Estimate of beta for a non-empty task; invariant to row order.
Eigen::VectorXd deepsets_forward(const DeepSetsModel& model, const Task& task);

}  // namespace amortlab
