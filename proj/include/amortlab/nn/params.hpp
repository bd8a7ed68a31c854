#pragma once

#include <algorithm>
#include <span>

#include <Eigen/Core>

#include "amortlab/error.hpp"

namespace amortlab::nn {

// Anything with visit_parameters(f) where f(double* data, size_t n) walks every parameter
// block in a fixed order. That order defines the flat gradient layout.

template <class Model>
std::size_t count_parameters(const Model& model) {
  std::size_t n = 0;
  model.visit_parameters([&](const double*, std::size_t len) { n += len; });
  return n;
}

template <class Model>
Eigen::VectorXd flatten(const Model& model) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(count_parameters(model)));
  std::size_t off = 0;
  model.visit_parameters([&](const double* data, std::size_t len) {
    std::copy(data, data + len, out.data() + off);
    off += len;
  });
  return out;
}

template <class Model>
void unflatten(Model& model, std::span<const double> flat) {
  std::size_t off = 0;
  model.visit_parameters([&](double* data, std::size_t len) {
    if (off + len > flat.size()) throw DimensionError("parameter vector too short");
    std::copy(flat.data() + off, flat.data() + off + len, data);
    off += len;
  });
  if (off != flat.size()) throw DimensionError("parameter vector too long");
}

inline void unflatten_into(auto& model, const Eigen::VectorXd& flat) {
  unflatten(model, std::span<const double>(flat.data(), static_cast<std::size_t>(flat.size())));
}

inline std::span<double> as_span(Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

/// Splits a flat gradient buffer into consecutive sub-spans, one per sub-model.
class GradSlicer {
 public:
  explicit GradSlicer(std::span<double> grad) : grad_(grad) {}
  std::span<double> take(std::size_t n) {
    if (off_ + n > grad_.size()) throw DimensionError("gradient buffer too short");
    auto s = grad_.subspan(off_, n);
    off_ += n;
    return s;
  }
  void finish() const {
    if (off_ != grad_.size()) throw DimensionError("gradient buffer size mismatch");
  }

 private:
  std::span<double> grad_;
  std::size_t off_ = 0;
};

}  // namespace amortlab::nn
