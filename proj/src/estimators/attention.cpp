#include "amortlab/estimators/attention.hpp"

#include <cmath>

#include "amortlab/error.hpp"
#include "amortlab/nn/params.hpp"

namespace amortlab {

namespace {

nn::RowMatrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(cols));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  nn::RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
  return m;
}

// Per-row standardization; returns the normalized rows and records xhat and 1/std.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& scale,
                           const Eigen::RowVectorXd& shift, Eigen::MatrixXd* xhat_out,
                           Eigen::VectorXd* inv_std_out) {
  const double d = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().sum() / d;
  Eigen::MatrixXd centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().sum() / d;
  Eigen::VectorXd inv_std = (var.array() + AttentionBlock::kNormEps).rsqrt();
  Eigen::MatrixXd xhat = centered.array().colwise() * inv_std.array();
  Eigen::MatrixXd y = (xhat.array().rowwise() * scale.array()).rowwise() + shift.array();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return y;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std,
                                    const Eigen::RowVectorXd& scale, std::span<double> g_scale,
                                    std::span<double> g_shift) {
  const auto d = xhat.cols();
  Eigen::Map<Eigen::RowVectorXd>(g_scale.data(), d) += dy.cwiseProduct(xhat).colwise().sum();
  Eigen::Map<Eigen::RowVectorXd>(g_shift.data(), d) += dy.colwise().sum();
  const Eigen::MatrixXd dxhat = dy.array().rowwise() * scale.array();
  const double inv_d = 1.0 / static_cast<double>(d);
  const Eigen::VectorXd mean_dxhat = dxhat.rowwise().sum() * inv_d;
  const Eigen::VectorXd mean_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum() * inv_d;
  Eigen::MatrixXd dx = (dxhat.colwise() - mean_dxhat) -
                       (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * inv_std.array();
}

}  // namespace

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  if (!scores.allFinite()) throw NumericError("non-finite attention score", 0);
  Eigen::MatrixXd a = scores.colwise() - scores.rowwise().maxCoeff();
  a = a.array().exp();
  a.array().colwise() /= a.rowwise().sum().array();
  return a;
}

AttentionBlock AttentionBlock::create(Eigen::Index d_model, int n_heads, Eigen::Index ffn_width,
                                      Rng& rng) {
  require(n_heads >= 1 && d_model % n_heads == 0, "attention: d_model must be divisible by n_heads");
  AttentionBlock b;
  b.n_heads = n_heads;
  b.query_proj = uniform_matrix(d_model, d_model, rng);
  b.key_proj = uniform_matrix(d_model, d_model, rng);
  b.value_proj = uniform_matrix(d_model, d_model, rng);
  b.output_proj = uniform_matrix(d_model, d_model, rng);
  b.feedforward = nn::Mlp({d_model, ffn_width, d_model}, nn::Activation::ReLU, rng);
  b.norm1_scale = Eigen::RowVectorXd::Ones(d_model);
  b.norm1_shift = Eigen::RowVectorXd::Zero(d_model);
  b.norm2_scale = Eigen::RowVectorXd::Ones(d_model);
  b.norm2_shift = Eigen::RowVectorXd::Zero(d_model);
  return b;
}

void AttentionBlock::validate() const {
  const auto d = d_model();
  require(n_heads >= 1 && d % n_heads == 0, "attention: d_model must be divisible by n_heads");
  for (const auto* m : {&key_proj, &value_proj, &output_proj})
    if (m->rows() != d || m->cols() != d) throw DimensionError("attention: projection shape");
  if (query_proj.cols() != d) throw DimensionError("attention: projection shape");
  if (feedforward.in_width() != d || feedforward.out_width() != d)
    throw DimensionError("attention: feedforward width");
  for (const auto* v : {&norm1_scale, &norm1_shift, &norm2_scale, &norm2_shift})
    if (v->size() != d) throw DimensionError("attention: norm width");
}

std::size_t AttentionBlock::parameter_count() const { return nn::count_parameters(*this); }

Eigen::MatrixXd AttentionBlock::forward(const Eigen::MatrixXd& tokens) const {
  Tape tape;
  return forward(tokens, tape);
}

Eigen::MatrixXd AttentionBlock::forward(const Eigen::MatrixXd& tokens, Tape& tape) const {
  require(tokens.rows() >= 1, "attention: needs at least one token");
  if (tokens.cols() != d_model()) throw DimensionError("attention: token width mismatch");
  const Eigen::Index dk = d_k();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  tape.x = tokens;
  tape.q.noalias() = tokens * query_proj.transpose();
  tape.k.noalias() = tokens * key_proj.transpose();
  tape.v.noalias() = tokens * value_proj.transpose();
  tape.mixed.resize(tokens.rows(), d_model());
  tape.attention.resize(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const auto cols = Eigen::seqN(h * dk, dk);
    Eigen::MatrixXd scores = tape.q(Eigen::all, cols) * tape.k(Eigen::all, cols).transpose();
    scores *= inv_sqrt_dk;
    auto& a = tape.attention[static_cast<std::size_t>(h)];
    a = softmax_rows(scores);
    tape.mixed(Eigen::all, cols).noalias() = a * tape.v(Eigen::all, cols);
  }
  Eigen::MatrixXd r1 = tokens;
  r1.noalias() += tape.mixed * output_proj.transpose();
  tape.h = layer_norm(r1, norm1_scale, norm1_shift, &tape.xhat1, &tape.inv_std1);
  Eigen::MatrixXd r2 = tape.h + feedforward.forward_batch(tape.h, tape.ffn);
  return layer_norm(r2, norm2_scale, norm2_shift, &tape.xhat2, &tape.inv_std2);
}

Eigen::MatrixXd AttentionBlock::backward(const Tape& tape, const Eigen::MatrixXd& grad_out,
                                         std::span<double> grad) const {
  const Eigen::Index d = d_model();
  const Eigen::Index dk = d_k();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  nn::GradSlicer slices(grad);
  const auto dd = static_cast<std::size_t>(d * d);
  const auto du = static_cast<std::size_t>(d);
  Eigen::Map<nn::RowMatrix> g_q(slices.take(dd).data(), d, d);
  Eigen::Map<nn::RowMatrix> g_k(slices.take(dd).data(), d, d);
  Eigen::Map<nn::RowMatrix> g_v(slices.take(dd).data(), d, d);
  Eigen::Map<nn::RowMatrix> g_o(slices.take(dd).data(), d, d);
  auto g_n1s = slices.take(du);
  auto g_n1b = slices.take(du);
  auto g_ffn = slices.take(feedforward.parameter_count());
  auto g_n2s = slices.take(du);
  auto g_n2b = slices.take(du);
  slices.finish();

  const Eigen::MatrixXd d_r2 =
      layer_norm_backward(grad_out, tape.xhat2, tape.inv_std2, norm2_scale, g_n2s, g_n2b);
  const Eigen::MatrixXd d_h = d_r2 + feedforward.backward(tape.ffn, d_r2, g_ffn);
  const Eigen::MatrixXd d_r1 =
      layer_norm_backward(d_h, tape.xhat1, tape.inv_std1, norm1_scale, g_n1s, g_n1b);

  g_o.noalias() += d_r1.transpose() * tape.mixed;
  const Eigen::MatrixXd d_mixed = d_r1 * output_proj;
  Eigen::MatrixXd d_q(tape.q.rows(), d), d_k_(tape.k.rows(), d), d_v(tape.v.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const auto cols = Eigen::seqN(h * dk, dk);
    const auto& a = tape.attention[static_cast<std::size_t>(h)];
    const Eigen::MatrixXd d_y = d_mixed(Eigen::all, cols);
    const Eigen::MatrixXd d_a = d_y * tape.v(Eigen::all, cols).transpose();
    d_v(Eigen::all, cols).noalias() = a.transpose() * d_y;
    const Eigen::VectorXd row_dot = d_a.cwiseProduct(a).rowwise().sum();
    const Eigen::MatrixXd d_s =
        (a.array() * (d_a.colwise() - row_dot).array()).matrix() * inv_sqrt_dk;
    d_q(Eigen::all, cols).noalias() = d_s * tape.k(Eigen::all, cols);
    d_k_(Eigen::all, cols).noalias() = d_s.transpose() * tape.q(Eigen::all, cols);
  }
  if (!d_q.allFinite() || !d_k_.allFinite()) throw NumericError("non-finite attention gradient", 0);
  g_q.noalias() += d_q.transpose() * tape.x;
  g_k.noalias() += d_k_.transpose() * tape.x;
  g_v.noalias() += d_v.transpose() * tape.x;
  Eigen::MatrixXd d_x = d_r1;
  d_x.noalias() += d_q * query_proj;
  d_x.noalias() += d_k_ * key_proj;
  d_x.noalias() += d_v * value_proj;
  return d_x;
}

std::vector<Eigen::MatrixXd> attention_weights(const AttentionBlock& block,
                                               const Eigen::MatrixXd& tokens) {
  AttentionBlock::Tape tape;
  block.forward(tokens, tape);
  return tape.attention;
}

Eigen::MatrixXd attention_forward(const AttentionBlock& block, const Eigen::MatrixXd& tokens) {
  return block.forward(tokens);
}

}  // namespace amortlab
