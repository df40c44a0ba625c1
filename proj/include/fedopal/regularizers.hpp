#pragma once

#include <utility>
#include <vector>

#include "fedopal/lora.hpp"
#include "fedopal/tensor.hpp"

namespace fedopal {

enum class Regularizer { none, weight, representation };

/// A_global [r_g×k] and A_personal [r_p×k] of one adapted layer.
struct AdapterPair {
  Tensor a_global;
  Tensor a_personal;
};

/// (1/N) Σ_i sum|A_g^i (A_p^i)ᵀ| over N adapted layers, the entrywise L1
/// norm of the r_g×r_p overlap between the two row spaces. With
/// `stop_global_gradient` the global side is treated as a constant.
Tensor orth_weight_loss(const std::vector<AdapterPair>& pairs,
                        bool stop_global_gradient = false);

/// Mean over layers and examples of |cos(z_global, z_personal)|.
Tensor orth_repr_loss(const RepresentationCapture& capture,
                      bool stop_global_gradient = false);

struct LossBreakdown {
  double task_loss = 0.0;
  double orth_loss = 0.0;
  double lambda = 0.0;
  Tensor total;  // differentiable task + lambda·orth
};

/// Throws ConfigError for negative lambda. `orth` may be undefined when no
/// regularizer is active.
LossBreakdown total_loss(const Tensor& task, const Tensor& orth, double lambda);

}  // namespace fedopal
