#include "amortlab/estimators/set_transformer.hpp"

#include <cmath>

#include "amortlab/error.hpp"
#include "amortlab/nn/params.hpp"

namespace amortlab {

namespace {

std::vector<Eigen::Index> chain(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                                Eigen::Index out) {
  std::vector<Eigen::Index> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  return widths;
}

Eigen::MatrixXd reorder(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& order) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < order.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(order[i]);
  return out;
}

}  // namespace

SetTransformerModel SetTransformerModel::create(const SetTransformerArch& arch, Rng& rng) {
  require(arch.p >= 1 && arch.d_model >= 1 && arch.n_blocks >= 0, "set transformer: bad architecture");
  require(arch.n_heads >= 1 && arch.d_model % arch.n_heads == 0,
          "set transformer: d_model must be divisible by n_heads");
  SetTransformerModel m;
  m.token_embed = nn::Mlp(chain(arch.p + 1, arch.embed_hidden, arch.d_model), nn::Activation::ReLU, rng);
  for (int b = 0; b < arch.n_blocks; ++b)
    m.blocks.push_back(AttentionBlock::create(arch.d_model, arch.n_heads, arch.ffn_width, rng));
  const Eigen::Index out = arch.sparse ? 2 * arch.p : arch.p;
  m.head = nn::Mlp(chain(arch.d_model, arch.head_hidden, out), nn::Activation::ReLU, rng);
  m.sparse = arch.sparse;
  m.scaling = TokenScaling::identity(arch.p + 1);
  return m;
}

std::size_t SetTransformerModel::parameter_count() const { return nn::count_parameters(*this); }

Eigen::MatrixXd SetTransformerModel::encode(const Eigen::MatrixXd& tokens) const {
  require(tokens.rows() >= 1, "set transformer: empty task");
  Eigen::MatrixXd h = token_embed.forward_batch(scaling.apply(reorder(tokens, canonical_order(tokens))));
  for (const auto& b : blocks) h = b.forward(h);
  return h;
}

Eigen::VectorXd SetTransformerModel::raw_output(const Eigen::MatrixXd& tokens) const {
  const Eigen::MatrixXd h = encode(tokens);
  const Eigen::RowVectorXd pooled = h.colwise().sum() / static_cast<double>(h.rows());
  return head.forward(pooled.transpose());
}

Eigen::VectorXd SetTransformerModel::raw_output(const Eigen::MatrixXd& tokens, Tape& tape) const {
  require(tokens.rows() >= 1, "set transformer: empty task");
  tape.order = canonical_order(tokens);
  Eigen::MatrixXd h = token_embed.forward_batch(scaling.apply(reorder(tokens, tape.order)), tape.embed);
  tape.blocks.resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) h = blocks[b].forward(h, tape.blocks[b]);
  const Eigen::RowVectorXd pooled = h.colwise().sum() / static_cast<double>(h.rows());
  return head.forward_batch(pooled, tape.head).row(0).transpose();
}

void SetTransformerModel::backward(const Tape& tape, const Eigen::VectorXd& grad_raw,
                                   std::span<double> grad) const {
  nn::GradSlicer slices(grad);
  auto g_embed = slices.take(token_embed.parameter_count());
  std::vector<std::span<double>> g_blocks;
  for (const auto& b : blocks) g_blocks.push_back(slices.take(b.parameter_count()));
  auto g_head = slices.take(head.parameter_count());
  slices.finish();

  const Eigen::MatrixXd d_pooled = head.backward(tape.head, grad_raw.transpose(), g_head);
  const auto n = static_cast<Eigen::Index>(tape.order.size());
  Eigen::MatrixXd d_h = (d_pooled / static_cast<double>(n)).replicate(n, 1);
  for (std::size_t b = blocks.size(); b-- > 0;) d_h = blocks[b].backward(tape.blocks[b], d_h, g_blocks[b]);
  token_embed.backward(tape.embed, d_h, g_embed);
}

SparseHeadOutput SetTransformerModel::split_sparse(const Eigen::VectorXd& raw) const {
  const Eigen::Index q = p();
  return sparse_head(scaling.out_scale * raw.head(q), raw.tail(q));
}

Eigen::VectorXd SetTransformerModel::predict(const Task& task) const {
  const Eigen::VectorXd raw = raw_output(task_tokens(task));
  if (sparse) return split_sparse(raw).beta_soft;
  return scaling.out_scale * raw;
}

SparseHeadOutput SetTransformerModel::predict_sparse(const Task& task) const {
  require(sparse, "set transformer: model has no sparsity gate");
  return split_sparse(raw_output(task_tokens(task)));
}

double SetTransformerModel::loss_and_grad(const Task& task, LossKind loss,
                                          std::span<double> grad) const {
  Tape tape;
  const Eigen::VectorXd raw = raw_output(task_tokens(task), tape);
  Eigen::VectorXd g;
  if (!sparse) {
    const double value = task_loss(task, scaling.out_scale * raw, loss, g);
    backward(tape, scaling.out_scale * g, grad);
    return value;
  }
  const Eigen::Index q = p();
  const SparseHeadOutput out = split_sparse(raw);
  const double value = task_loss(task, out.beta_soft, loss, g);
  Eigen::VectorXd g_raw(2 * q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const double prob = out.gate_prob(j);
    g_raw(j) = scaling.out_scale * g(j) * prob;
    const bool clamped = prob <= kGateFloor || prob >= 1.0 - kGateFloor;
    g_raw(q + j) = clamped ? 0.0 : g(j) * out.magnitude(j) * prob * (1.0 - prob);
  }
  backward(tape, g_raw, grad);
  return value;
}

Eigen::VectorXd settransformer_forward(const SetTransformerModel& model, const Task& task) {
  require(task.n_obs() >= 1, "set transformer: empty task");
  if (task.dim() != model.p()) throw DimensionError("set transformer: task dimension mismatch");
  return model.predict(task);
}

SparseHeadOutput settransformer_sparse_forward(const SetTransformerModel& model, const Task& task) {
  require(task.n_obs() >= 1, "set transformer: empty task");
  if (task.dim() != model.p()) throw DimensionError("set transformer: task dimension mismatch");
  return model.predict_sparse(task);
}

}  // namespace amortlab
