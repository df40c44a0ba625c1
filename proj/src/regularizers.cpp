#include "fedopal/regularizers.hpp"

#include "fedopal/error.hpp"

namespace fedopal {

Tensor orth_weight_loss(const std::vector<AdapterPair>& pairs,
                        bool stop_global_gradient) {
  if (pairs.empty()) throw ContractError("orth_weight_loss: no adapted layers");
  std::vector<Tensor> terms;
  terms.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.a_global.cols() != p.a_personal.cols()) {
      throw ShapeError("orth_weight_loss: A_global " +
                       shape_str(p.a_global.shape()) + " and A_personal " +
                       shape_str(p.a_personal.shape()) +
                       " disagree on input width");
    }
    const Tensor g = stop_global_gradient ? p.a_global.detach() : p.a_global;
    // Rows of A span the adapter input subspace: A_g·A_pᵀ [r_g×r_p] vanishes
    // exactly when the two row spaces are orthogonal.
    terms.push_back(sum(abs(matmul_nt(g, p.a_personal))));
  }
  return scale(sum_scalars(terms), 1.0 / static_cast<double>(pairs.size()));
}

Tensor orth_repr_loss(const RepresentationCapture& capture,
                      bool stop_global_gradient) {
  if (capture.layers == 0 || capture.batch == 0 ||
      capture.pairs.size() != capture.layers * capture.batch) {
    throw ContractError("orth_repr_loss: capture holds " +
                        std::to_string(capture.pairs.size()) + " pairs for " +
                        std::to_string(capture.layers) + " layers × " +
                        std::to_string(capture.batch) + " examples");
  }
  std::vector<Tensor> terms;
  terms.reserve(capture.pairs.size());
  for (const auto& p : capture.pairs) {
    if (!p.global.defined() || !p.personal.defined()) {
      throw ContractError("orth_repr_loss: missing representation pair");
    }
    const Tensor g = stop_global_gradient ? p.global.detach() : p.global;
    terms.push_back(abs(cosine_similarity(g, p.personal)));
  }
  return scale(sum_scalars(terms),
               1.0 / static_cast<double>(capture.pairs.size()));
}

LossBreakdown total_loss(const Tensor& task, const Tensor& orth, double lambda) {
  if (!(lambda >= 0.0)) {
    throw ConfigError("lambda must be non-negative, got " +
                      std::to_string(lambda));
  }
  LossBreakdown out;
  out.task_loss = task.item();
  out.lambda = lambda;
  if (orth.defined()) {
    out.orth_loss = orth.item();
    out.total = add(task, scale(orth, lambda));
  } else {
    out.total = task;
  }
  return out;
}

}  // namespace fedopal
