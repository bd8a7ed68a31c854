#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "amortlab/nn/mlp.hpp"

namespace amortlab {

// Post-norm multi-head self-attention block:
//   H   = LN1(X + concat_h(A_h V_h) Wo^T),  A_h = softmax_rows(Q_h K_h^T / sqrt(d_k))
//   out = LN2(H + FFN(H))
// No positional information enters anywhere, so the block is permutation-equivariant.
struct AttentionBlock {
  nn::RowMatrix query_proj;  // d_model x d_model; head h owns rows [h d_k, (h+1) d_k)
  nn::RowMatrix key_proj;
  nn::RowMatrix value_proj;
  nn::RowMatrix output_proj;
  int n_heads = 1;
  nn::Mlp feedforward;
  Eigen::RowVectorXd norm1_scale, norm1_shift;
  Eigen::RowVectorXd norm2_scale, norm2_shift;

  static constexpr double kNormEps = 1e-5;

  struct Tape {
    Eigen::MatrixXd x, q, k, v, mixed;
    std::vector<Eigen::MatrixXd> attention;  // per head, N x N
    Eigen::MatrixXd xhat1, h, xhat2;
    Eigen::VectorXd inv_std1, inv_std2;
    nn::MlpTape ffn;
  };

  static AttentionBlock create(Eigen::Index d_model, int n_heads, Eigen::Index ffn_width, Rng& rng);

  Eigen::Index d_model() const { return query_proj.rows(); }
  Eigen::Index d_k() const { return d_model() / n_heads; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& tokens) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& tokens, Tape& tape) const;
  /// Accumulates parameter gradients and returns dL/dtokens.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& grad_out,
                           std::span<double> grad) const;

  std::size_t parameter_count() const;
  template <class F>
  void visit_parameters(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit_parameters(F&& f) const {
    visit_impl(*this, f);
  }

  void validate() const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    auto block = [&](auto& m) { f(m.data(), static_cast<std::size_t>(m.size())); };
    block(self.query_proj);
    block(self.key_proj);
    block(self.value_proj);
    block(self.output_proj);
    block(self.norm1_scale);
    block(self.norm1_shift);
    self.feedforward.visit_parameters(f);
    block(self.norm2_scale);
    block(self.norm2_shift);
  }
};

/// Row-wise numerically stable softmax. Throws NumericError on non-finite scores.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);

/// Per-head attention matrices A_h for the given tokens.
std::vector<Eigen::MatrixXd> attention_weights(const AttentionBlock& block,
                                               const Eigen::MatrixXd& tokens);

Eigen::MatrixXd attention_forward(const AttentionBlock& block, const Eigen::MatrixXd& tokens);

}  // namespace amortlab
