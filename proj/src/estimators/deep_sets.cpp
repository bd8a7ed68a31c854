#include "amortlab/estimators/deep_sets.hpp"

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

}  // namespace

DeepSetsModel DeepSetsModel::create(const DeepSetsArch& arch, Rng& rng) {
  require(arch.p >= 1 && arch.latent >= 1, "deep sets: bad architecture");
  const Eigen::Index out = arch.out_width > 0 ? arch.out_width : arch.p;
  DeepSetsModel m;
  const auto enc = chain(arch.p + 1, arch.encoder_hidden, arch.latent);
  const auto dec = chain(arch.latent, arch.decoder_hidden, out);
  m.encoder = nn::Mlp(enc, nn::Activation::ReLU, rng);
  m.decoder = nn::Mlp(dec, nn::Activation::ReLU, rng);
  m.pool = arch.pool;
  m.scaling = TokenScaling::identity(arch.p + 1);
  return m;
}

Eigen::RowVectorXd DeepSetsModel::pooled(const Eigen::MatrixXd& tokens) const {
  if (tokens.rows() == 0) return Eigen::RowVectorXd::Zero(encoder.out_width());
  const auto order = canonical_order(tokens);
  Eigen::RowVectorXd z = pool_rows(encoder.forward_batch(scaling.apply(tokens)), order, pool);
  if (pool == PoolKind::Sum) z /= scaling.set_size;
  return z;
}

Eigen::VectorXd DeepSetsModel::raw_output(const Eigen::MatrixXd& tokens) const {
  return decoder.forward(pooled(tokens).transpose());
}

Eigen::VectorXd DeepSetsModel::raw_output(const Eigen::MatrixXd& tokens, Tape& tape) const {
  Eigen::RowVectorXd z;
  if (tokens.rows() == 0) {
    tape.order.clear();
    tape.encoder = {};
    z = Eigen::RowVectorXd::Zero(encoder.out_width());
  } else {
    tape.order = canonical_order(tokens);
    z = pool_rows(encoder.forward_batch(scaling.apply(tokens), tape.encoder), tape.order, pool);
    if (pool == PoolKind::Sum) z /= scaling.set_size;
  }
  return decoder.forward_batch(z, tape.decoder).row(0).transpose();
}

void DeepSetsModel::backward(const Tape& tape, const Eigen::VectorXd& grad_raw,
                             std::span<double> grad) const {
  nn::GradSlicer slices(grad);
  auto g_enc = slices.take(encoder.parameter_count());
  auto g_dec = slices.take(decoder.parameter_count());
  slices.finish();
  const Eigen::MatrixXd dz = decoder.backward(tape.decoder, grad_raw.transpose(), g_dec);
  const auto n = static_cast<Eigen::Index>(tape.order.size());
  if (n == 0) return;
  Eigen::RowVectorXd dh = dz.row(0);
  dh /= pool == PoolKind::Mean ? static_cast<double>(n) : scaling.set_size;
  const Eigen::MatrixXd dH = dh.replicate(n, 1);
  encoder.backward(tape.encoder, dH, g_enc);
}

Eigen::VectorXd DeepSetsModel::predict(const Task& task) const {
  return scaling.out_scale * raw_output(task_tokens(task));
}

double DeepSetsModel::loss_and_grad(const Task& task, LossKind loss, std::span<double> grad) const {
  Tape tape;
  const Eigen::VectorXd raw = raw_output(task_tokens(task), tape);
  Eigen::VectorXd g;
  const double value = task_loss(task, scaling.out_scale * raw, loss, g);
  backward(tape, scaling.out_scale * g, grad);
  return value;
}

Eigen::VectorXd deepsets_forward(const DeepSetsModel& model, const Task& task) {
  require(task.n_obs() >= 1, "deep sets: empty task");
  if (task.dim() != model.p()) throw DimensionError("deep sets: task dimension mismatch");
  return model.predict(task);
}

}  // namespace amortlab
