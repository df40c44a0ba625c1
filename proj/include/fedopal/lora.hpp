#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedopal/tensor.hpp"

namespace fedopal {

/// Low-rank update s·B·A beside a frozen weight, with s = alpha / rank.
struct LoRAAdapter {
  Tensor A;  // rank × in_features
  Tensor B;  // out_features × rank
  std::size_t rank = 0;
  double alpha = 0.0;
  bool enabled = true;

  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t in_features() const { return A.cols(); }
  std::size_t out_features() const { return B.rows(); }
};

/// B = 0 and A ~ N(0, 1/r), reproducible from `seed`.
/// Throws ConfigError unless 1 ≤ r ≤ min(d, k).
LoRAAdapter init_adapter(std::size_t d, std::size_t k, std::size_t r,
                         double alpha, std::uint64_t seed);

/// s·(x·Aᵀ)·Bᵀ for x[n×k]: the adapter's additive output.
Tensor adapter_contribution(const LoRAAdapter& adapter, const Tensor& x);

/// W0 + s·B·A as a plain dense matrix.
Tensor merge_adapter(const Tensor& W0, const LoRAAdapter& adapter);

enum class AdapterSlot : std::uint8_t { global = 0, personal = 1 };

struct DualForward {
  Tensor y;
  // Adapter contributions [n×d]; defined only when captured and enabled.
  Tensor z_global;
  Tensor z_personal;
};

/// A frozen projection y = x·W0ᵀ + bias carrying a global and a personal
/// adapter. Rows of x are tokens.
class DualAdapterLinear {
 public:
  DualAdapterLinear() = default;
  DualAdapterLinear(Tensor W0, Tensor bias, LoRAAdapter global,
                    LoRAAdapter personal, std::size_t layer_index);

  DualForward forward(const Tensor& x, bool capture) const;

  const Tensor& W0() const { return W0_; }
  const Tensor& bias() const { return bias_; }
  Tensor& W0() { return W0_; }
  Tensor& bias() { return bias_; }
  LoRAAdapter& adapter(AdapterSlot slot) {
    return slot == AdapterSlot::global ? global_ : personal_;
  }
  const LoRAAdapter& adapter(AdapterSlot slot) const {
    return slot == AdapterSlot::global ? global_ : personal_;
  }
  std::size_t layer_index() const { return layer_index_; }

 private:
  Tensor W0_;
  Tensor bias_;
  LoRAAdapter global_;
  LoRAAdapter personal_;
  std::size_t layer_index_ = 0;
};

/// z pairs of every adapted layer for every example, layer-major.
struct RepresentationCapture {
  struct Pair {
    Tensor global;
    Tensor personal;
  };
  std::size_t layers = 0;
  std::size_t batch = 0;
  std::vector<Pair> pairs;  // index layer * batch + example

  const Pair& at(std::size_t layer, std::size_t example) const {
    return pairs.at(layer * batch + example);
  }
};

// ------------------------------------------------------------------ bundles

enum class Projection : std::uint8_t { query = 0, key = 1, value = 2 };

const char* projection_name(Projection p);
const char* slot_name(AdapterSlot s);

struct AdapterKey {
  std::uint32_t block = 0;
  Projection projection = Projection::query;
  AdapterSlot slot = AdapterSlot::global;

  auto operator<=>(const AdapterKey&) const = default;
};

/// Serializable set of adapters plus an optional full-model tensor section
/// (used for base checkpoints).
struct AdapterBundle {
  std::string method;
  std::uint64_t config_hash = 0;
  std::map<AdapterKey, LoRAAdapter> adapters;
  std::map<std::string, Tensor> tensors;
};

inline constexpr std::uint32_t kBundleVersion = 1;

void save_bundle(const AdapterBundle& bundle, const std::filesystem::path& path);

/// Throws FormatError on malformed input and IncompatibleError when
/// `expected_hash` is given and differs from the stored one.
AdapterBundle load_bundle(const std::filesystem::path& path,
                          std::optional<std::uint64_t> expected_hash = {});

}  // namespace fedopal
