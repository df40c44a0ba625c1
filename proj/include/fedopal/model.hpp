#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedopal/lora.hpp"
#include "fedopal/tensor.hpp"

namespace fedopal {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 2;
  std::size_t mlp_dim = 128;
  std::size_t num_classes = 5;
  std::size_t rank_global = 8;
  std::size_t rank_personal = 8;
  double alpha = 0.0;  // 0 means alpha = rank, i.e. unit scale
  std::uint64_t seed = 0;

  std::size_t tokens() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  /// Number of adapted projections (query, key, value per block).
  std::size_t adapted_layers() const { return 3 * num_blocks; }
  double alpha_for(std::size_t rank) const {
    return alpha > 0.0 ? alpha : static_cast<double>(rank);
  }

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  /// Hash over every shape-determining field (not the seed).
  std::uint64_t config_hash() const;
  /// Hash over the frozen backbone only: head and adapters excluded, so a
  /// pre-trained base can be reused for a different label space or rank.
  std::uint64_t backbone_hash() const;
};

/// Closed-form scalar parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// image [channels×H×W] → [tokens × channels·patch²], patches in row-major
/// order, each flattened channel-major.
Tensor patchify(const Tensor& image, const ModelConfig& config);
Tensor unpatchify(const Tensor& tokens, const ModelConfig& config);

struct ParamPartition {
  std::vector<std::string> base_frozen;
  std::vector<std::string> head;
  std::vector<std::string> adapters_global;
  std::vector<std::string> adapters_personal;
};

struct ModelOutput {
  Tensor logits;  // [batch × classes]
  RepresentationCapture capture;
};

class VitModel {
 public:
  struct Block {
    Tensor ln1_gain, ln1_bias;
    std::array<DualAdapterLinear, 3> qkv;
    Tensor attn_out_weight, attn_out_bias;
    Tensor ln2_gain, ln2_bias;
    Tensor fc1_weight, fc1_bias;
    Tensor fc2_weight, fc2_bias;
  };

  /// Adapters and head start trainable, every other tensor frozen.
  explicit VitModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// batch: [B × channels × H × W]. With `capture`, z pairs are collected for
  /// every adapted layer when both adapter slots are enabled.
  ModelOutput forward(const Tensor& batch, bool capture = false) const;

  /// Every tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  Tensor tensor(const std::string& name) const;
  /// Copies values into the named tensor in place; shapes must agree.
  void assign(const std::string& name, const Tensor& values);

  /// requires_grad on exactly the listed tensors.
  void set_trainable(const std::set<std::string>& names);
  void set_slot_enabled(AdapterSlot slot, bool enabled);
  bool slot_enabled(AdapterSlot slot) const;
  void clear_grads();

  DualAdapterLinear& projection(std::size_t block, Projection p) {
    return blocks_.at(block).qkv[static_cast<std::size_t>(p)];
  }
  const DualAdapterLinear& projection(std::size_t block, Projection p) const {
    return blocks_.at(block).qkv[static_cast<std::size_t>(p)];
  }

  /// A_global/A_personal of every adapted layer, in layer order.
  std::vector<std::pair<Tensor, Tensor>> adapter_a_pairs() const;

  /// Re-draws head weights from `seed`, e.g. for a new label space.
  void reset_head(std::uint64_t seed);

 private:
  ModelConfig config_;
  Tensor patch_weight_, patch_bias_, pos_;
  std::vector<Block> blocks_;
  Tensor final_gain_, final_bias_;
  Tensor head_weight_, head_bias_;
};

ParamPartition param_partition(const VitModel& model);

/// Adapters (and any extra named tensors) into a bundle keyed by config hash.
AdapterBundle export_adapters(const VitModel& model, const std::string& method);
void import_adapters(VitModel& model, const AdapterBundle& bundle);

/// Base checkpoint: the backbone tensors in the bundle's full-model section,
/// keyed by the backbone hash.
void save_base_checkpoint(const VitModel& model,
                          const std::filesystem::path& path);
void load_base_checkpoint(VitModel& model, const std::filesystem::path& path);

}  // namespace fedopal
