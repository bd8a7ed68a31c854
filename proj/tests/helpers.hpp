#pragma once

#include <algorithm>
#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "amortlab/rng.hpp"
#include "amortlab/task_gen.hpp"

namespace testutil {

inline amortlab::Task random_task(int n, int p, std::uint64_t seed) {
  amortlab::Rng rng(seed);
  amortlab::Task t;
  t.inputs = amortlab::standard_normal(rng, n, p);
  t.beta_true = amortlab::standard_normal(rng, p, 1).col(0);
  t.outputs = t.inputs * t.beta_true + amortlab::standard_normal(rng, n, 1).col(0);
  t.task_seed = seed;
  return t;
}

inline std::vector<Eigen::Index> shuffled(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  amortlab::Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Fresh scratch directory under the build tree, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("amortlab_test_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testutil
