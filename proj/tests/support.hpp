#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "fedopal/federation.hpp"
#include "fedopal/rng.hpp"
#include "fedopal/tensor.hpp"

namespace testing {

inline fedopal::Tensor random_tensor(fedopal::Shape shape, std::uint64_t seed,
                                     double lo = -1.0, double hi = 1.0) {
  fedopal::Rng rng(seed);
  std::vector<double> v(fedopal::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return fedopal::Tensor::from(std::move(shape), std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

// Naive triple loop, row-major.
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b,
                                        std::size_t m, std::size_t n, std::size_t p) {
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < n; ++k) s += static_cast<long double>(a[i * n + k]) * b[k * p + j];
      c[i * p + j] = static_cast<double>(s);
    }
  return c;
}

inline std::vector<double> transpose(std::span<const double> a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(a.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

// Fresh scratch directory per test.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fedopal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// A model and task small enough for multi-round federated runs in a test.
inline fedopal::ModelConfig tiny_model() {
  fedopal::ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.num_blocks = 1;
  c.mlp_dim = 16;
  c.num_classes = 3;
  c.rank_global = 2;
  c.rank_personal = 2;
  return c;
}

inline fedopal::SyntheticDatasetConfig tiny_data(std::size_t clients = 3) {
  fedopal::SyntheticDatasetConfig d;
  d.num_clients = clients;
  d.num_classes = 3;
  d.image_size = 8;
  d.samples_per_client.assign(clients, 30);
  for (std::size_t k = 0; k < clients; ++k) d.samples_per_client[k] = 36 - 6 * (k % 4);
  return d;
}

inline fedopal::ExperimentConfig tiny_experiment(std::size_t rounds = 3) {
  fedopal::ExperimentConfig e;
  e.model = tiny_model();
  e.data = tiny_data();
  e.rounds = rounds;
  e.seeds = {0};
  e.batch_size = 8;
  e.record_wall_clock = false;
  return e;
}

}  // namespace testing
