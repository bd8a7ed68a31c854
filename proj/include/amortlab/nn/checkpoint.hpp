#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amortlab/nn/mlp.hpp"

namespace amortlab::nn {

// Binary checkpoint layout (little-endian):
//   8 bytes   magic "AMLCKPT1"
//   u64       header length H
//   H bytes   UTF-8 header, one record per line:
//               kind <estimator kind>
//               meta <key> <value>
//               tensor <name> <rows> <cols> <code>   (code = activation for dense weights, else -1)
//   f64[...]  every tensor in header order, row-major
// Activation codes: 0 Identity, 1 ReLU, 2 Tanh.
struct TensorEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  int code = -1;
  std::size_t offset = 0;
};

class Checkpoint {
 public:
  std::string kind;
  std::map<std::string, std::string> meta;

  void add_tensor(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                  const double* row_major, int code = -1);
  void add_vector(const std::string& name, const Eigen::VectorXd& v);
  void add_mlp(const std::string& prefix, const Mlp& mlp);

  const TensorEntry& entry(const std::string& name) const;
  RowMatrix tensor(const std::string& name) const;
  Eigen::VectorXd vector(const std::string& name) const;
  Mlp mlp(const std::string& prefix) const;
  bool has(const std::string& name) const;

  const std::vector<TensorEntry>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<TensorEntry> tensors_;
  std::vector<double> values_;
};

}  // namespace amortlab::nn
