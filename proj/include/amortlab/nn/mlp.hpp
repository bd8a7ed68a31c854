#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "amortlab/rng.hpp"

namespace amortlab::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation : std::uint8_t { Identity = 0, ReLU = 1, Tanh = 2 };

struct DenseLayer {
  RowMatrix weights;  // out x in
  Eigen::VectorXd bias;
  Activation activation = Activation::Identity;

  Eigen::Index in_width() const { return weights.cols(); }
  Eigen::Index out_width() const { return weights.rows(); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(weights.size() + bias.size());
  }
};

/// Activations of every layer for one batched forward pass; consumed by Mlp::backward.
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;  // input to layer l (rows are samples)
  std::vector<Eigen::MatrixXd> outputs;  // post-activation output of layer l
};

// Feed-forward network a_l = act_l(W_l a_{l-1} + b_l). Batched calls take one sample per row.
// The last layer is always Identity.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);
  /// widths = {in, hidden..., out}; fan-in scaled uniform weights, zero biases.
  Mlp(std::span<const Eigen::Index> widths, Activation hidden, Rng& rng);
  Mlp(std::initializer_list<Eigen::Index> widths, Activation hidden, Rng& rng)
      : Mlp(std::span<const Eigen::Index>(widths.begin(), widths.size()), hidden, rng) {}

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& rows, MlpTape& tape) const;

  /// Accumulates dL/dparams into `grad` (layout of visit_parameters) and returns dL/dinput.
  Eigen::MatrixXd backward(const MlpTape& tape, const Eigen::MatrixXd& grad_output,
                           std::span<double> grad) const;

  std::size_t depth() const { return layers_.size(); }
  Eigen::Index in_width() const { return layers_.front().in_width(); }
  Eigen::Index out_width() const { return layers_.back().out_width(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t parameter_count() const;

  template <class F>
  void visit_parameters(F&& f) {
    for (auto& layer : layers_) {
      f(layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
      f(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }
  template <class F>
  void visit_parameters(F&& f) const {
    for (const auto& layer : layers_) {
      f(layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
      f(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }

  void validate() const;

 private:
  std::vector<DenseLayer> layers_;
};

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z);

}  // namespace amortlab::nn
