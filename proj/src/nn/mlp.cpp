#include "amortlab/nn/mlp.hpp"

#include <cmath>
#include <string>

#include "amortlab/error.hpp"

namespace amortlab::nn {

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
  }
  return z;
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

Mlp::Mlp(std::span<const Eigen::Index> widths, Activation hidden, Rng& rng) {
  require(widths.size() >= 2, "an MLP needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Eigen::Index fan_in = widths[l];
    const Eigen::Index fan_out = widths[l + 1];
    require(fan_in >= 1 && fan_out >= 1, "layer widths must be >= 1");
    const bool last = l + 2 == widths.size();
    DenseLayer layer;
    layer.activation = last ? Activation::Identity : hidden;
    const double gain = layer.activation == Activation::ReLU ? 6.0 : 3.0;
    const double bound = std::sqrt(gain / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    layer.weights.resize(fan_out, fan_in);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = uniform(rng);
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    layers_.push_back(std::move(layer));
  }
  validate();
}

void Mlp::validate() const {
  if (layers_.empty()) throw DimensionError("MLP has no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.out_width())
      throw DimensionError("layer " + std::to_string(l) + ": bias width mismatch");
    if (l > 0 && layer.in_width() != layers_[l - 1].out_width())
      throw DimensionError("layer " + std::to_string(l) + ": input width does not chain");
    if (!layer.weights.allFinite() || !layer.bias.allFinite())
      throw NumericError("non-finite parameter", static_cast<std::ptrdiff_t>(l));
  }
  if (layers_.back().activation != Activation::Identity)
    throw DimensionError("final MLP layer must be Identity");
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.parameter_count();
  return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  if (input.size() != in_width())
    throw DimensionError("MLP input has width " + std::to_string(input.size()) + ", expected " +
                         std::to_string(in_width()));
  Eigen::VectorXd a = input;
  for (const auto& layer : layers_) {
    Eigen::VectorXd z = layer.weights * a + layer.bias;
    a = apply_activation(layer.activation, z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != in_width())
    throw DimensionError("MLP input has width " + std::to_string(rows.cols()) + ", expected " +
                         std::to_string(in_width()));
  Eigen::MatrixXd a = rows;
  for (const auto& layer : layers_) {
    Eigen::MatrixXd z = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    a = apply_activation(layer.activation, z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& rows, MlpTape& tape) const {
  if (rows.cols() != in_width())
    throw DimensionError("MLP input has width " + std::to_string(rows.cols()) + ", expected " +
                         std::to_string(in_width()));
  tape.inputs.resize(layers_.size());
  tape.outputs.resize(layers_.size());
  const Eigen::MatrixXd* a = &rows;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    tape.inputs[l] = *a;
    Eigen::MatrixXd z = (*a) * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    tape.outputs[l] = apply_activation(layer.activation, z);
    a = &tape.outputs[l];
  }
  return tape.outputs.back();
}

Eigen::MatrixXd Mlp::backward(const MlpTape& tape, const Eigen::MatrixXd& grad_output,
                              std::span<double> grad) const {
  if (grad.size() != parameter_count()) throw DimensionError("MLP gradient buffer size mismatch");
  if (tape.outputs.size() != layers_.size()) throw DimensionError("MLP tape does not match model");
  // Gradient offsets follow visit_parameters: per layer, weights (row-major) then bias.
  std::vector<std::size_t> offsets(layers_.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = off;
    off += layers_[l].parameter_count();
  }
  Eigen::MatrixXd delta = grad_output;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const auto& out = tape.outputs[li];
    switch (layer.activation) {
      case Activation::Identity: break;
      case Activation::ReLU: delta = delta.cwiseProduct((out.array() > 0.0).cast<double>().matrix()); break;
      case Activation::Tanh: delta = delta.cwiseProduct((1.0 - out.array().square()).matrix()); break;
    }
    if (!delta.allFinite()) throw NumericError("non-finite gradient", static_cast<std::ptrdiff_t>(li));
    Eigen::Map<RowMatrix> dw(grad.data() + offsets[li], layer.out_width(), layer.in_width());
    Eigen::Map<Eigen::VectorXd> db(grad.data() + offsets[li] + layer.weights.size(), layer.out_width());
    dw.noalias() += delta.transpose() * tape.inputs[li];
    db.noalias() += delta.colwise().sum().transpose();
    delta = delta * layer.weights;
  }
  return delta;
}

}  // namespace amortlab::nn
