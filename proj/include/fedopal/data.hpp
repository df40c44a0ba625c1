#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedopal/rng.hpp"
#include "fedopal/tensor.hpp"

namespace fedopal {

struct SyntheticDatasetConfig {
  std::size_t num_clients = 6;
  std::size_t num_classes = 5;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::vector<std::size_t> samples_per_client = {400, 300, 220, 160, 120, 90};
  double dirichlet_beta = 0.3;
  double feature_shift = 0.3;
  double noise_sigma = 0.3;
  std::uint64_t seed = 7;
  /// Selects the per-class pattern family; a different value gives an
  /// unrelated label space with the same kind of visual structure.
  std::uint64_t pattern_seed = 1;
  double test_fraction = 0.2;
  double val_fraction = 0.2;

  void validate() const;
};

struct Sample {
  Tensor image;  // [channels × H × W], values in [0, 1]
  std::size_t label = 0;
  std::size_t client = 0;
};

struct ClientSplits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

using Histogram = std::vector<std::size_t>;

struct FederatedDataset {
  SyntheticDatasetConfig config;
  std::vector<ClientSplits> clients;
  std::vector<Histogram> histograms;  // per client, over all three splits

  /// Histograms recomputed from the stored samples.
  std::vector<Histogram> compute_histograms() const;
  /// Single client holding every client's splits, in client order.
  FederatedDataset pooled() const;
};

/// Class-specific oriented stripes plus a blob, rendered with noise.
class PatternGenerator {
 public:
  PatternGenerator(std::size_t num_classes, std::size_t image_size,
                   std::size_t channels, std::uint64_t pattern_seed);

  /// Throws IndexError for class ≥ num_classes.
  Tensor generate(std::size_t cls, double noise_sigma, Rng& rng) const;

 private:
  struct ClassPattern {
    double angle;
    double frequency;
    double blob_x;
    double blob_y;
    double blob_radius;
  };
  std::vector<ClassPattern> patterns_;
  std::size_t image_size_;
  std::size_t channels_;
};

/// Per-client channel-wise gain and offset with magnitude ∝ strength,
/// fixed by (seed, client); the result is clamped to [0, 1].
Tensor apply_feature_shift(const Tensor& image, std::size_t client,
                           double strength, std::uint64_t seed);

/// Splits each class's indices across clients with Dirichlet(beta)
/// proportions. Exact partition: every index lands in exactly one list.
std::vector<std::vector<std::size_t>> dirichlet_partition(
    std::span<const std::size_t> labels, std::size_t num_clients, double beta,
    Rng& rng);

/// Horizontal mirror with probability 1/2.
Tensor augment(const Tensor& image, Rng& rng);
Tensor hflip(const Tensor& image);

FederatedDataset generate_dataset(const SyntheticDatasetConfig& config);

/// Unpartitioned labelled pool (no feature shift), e.g. for base training.
std::vector<Sample> generate_pool(const SyntheticDatasetConfig& config,
                                  std::size_t per_class);

inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const FederatedDataset& ds, const std::filesystem::path& path);
FederatedDataset load_dataset(const std::filesystem::path& path);

/// Stacks images into [B × C × H × W] with optional augmentation.
struct Batch {
  Tensor images;
  std::vector<std::size_t> labels;
};
Batch make_batch(std::span<const Sample> samples,
                 std::span<const std::size_t> indices, Rng* augment_rng);

}  // namespace fedopal
