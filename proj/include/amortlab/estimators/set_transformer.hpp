#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "amortlab/estimators/attention.hpp"
#include "amortlab/estimators/common.hpp"
#include "amortlab/nn/mlp.hpp"

namespace amortlab {

struct SetTransformerArch {
  Eigen::Index p = 20;
  Eigen::Index d_model = 64;
  int n_heads = 4;
  int n_blocks = 2;
  Eigen::Index ffn_width = 128;
  std::vector<Eigen::Index> embed_hidden{64};
  std::vector<Eigen::Index> head_hidden{128};
  bool sparse = false;  // two-head variant: magnitude and gate logits
};

// embed -> attention blocks -> mean pool -> head. Rows are put in canonical order on entry,
// so the output is bit-identical under any row permutation.
class SetTransformerModel {
 public:
  nn::Mlp token_embed;
  std::vector<AttentionBlock> blocks;
  nn::Mlp head;
  bool sparse = false;
  TokenScaling scaling;

  struct Tape {
    std::vector<Eigen::Index> order;
    nn::MlpTape embed;
    std::vector<AttentionBlock::Tape> blocks;
    nn::MlpTape head;
  };

  static SetTransformerModel create(const SetTransformerArch& arch, Rng& rng);

  Eigen::Index p() const { return token_embed.in_width() - 1; }
  Eigen::Index d_model() const { return token_embed.out_width(); }

  /// Token representations after the last block (rows in canonical order).
  Eigen::MatrixXd encode(const Eigen::MatrixXd& tokens) const;
  Eigen::VectorXd raw_output(const Eigen::MatrixXd& tokens) const;
  Eigen::VectorXd raw_output(const Eigen::MatrixXd& tokens, Tape& tape) const;
  void backward(const Tape& tape, const Eigen::VectorXd& grad_raw, std::span<double> grad) const;

  /// beta_hat; the soft estimate for the sparse variant.
  Eigen::VectorXd predict(const Task& task) const;
  SparseHeadOutput predict_sparse(const Task& task) const;
  double loss_and_grad(const Task& task, LossKind loss, std::span<double> grad) const;

  std::size_t parameter_count() const;
  template <class F>
  void visit_parameters(F&& f) {
    token_embed.visit_parameters(f);
    for (auto& b : blocks) b.visit_parameters(f);
    head.visit_parameters(f);
  }
  template <class F>
  void visit_parameters(F&& f) const {
    token_embed.visit_parameters(f);
    for (const auto& b : blocks) b.visit_parameters(f);
    head.visit_parameters(f);
  }

 private:
  SparseHeadOutput split_sparse(const Eigen::VectorXd& raw) const;
};

Eigen::VectorXd settransformer_forward(const SetTransformerModel& model, const Task& task);
SparseHeadOutput settransformer_sparse_forward(const SetTransformerModel& model, const Task& task);

}  // namespace amortlab
