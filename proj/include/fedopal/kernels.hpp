#pragma once

// Dense compute kernels used by the autodiff ops.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// variant in `kernels::omp`. Both accumulate each output element in the same
// order, so the two are bit-identical; the tests hold them to that. The
// unqualified entry points dispatch to the OpenMP variant unless called from
// inside an active parallel region (client-level parallelism), in which case
// they stay serial.

#include <cstddef>
#include <span>

namespace fedopal::kernels {

/// Shape of a product C[m×n] = op(A)[m×k] · op(B)[k×n].
/// With trans_a, A is stored k×m; with trans_b, B is stored n×k.
struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  bool trans_a = false;
  bool trans_b = false;
};

/// Multi-head attention layout: rows are batch-major tokens, so q/k/v are
/// [batch·tokens × heads·head_dim].
struct AttentionShape {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;

  std::size_t width() const { return heads * head_dim; }
  std::size_t rows() const { return batch * tokens; }
  std::size_t prob_size() const { return batch * heads * tokens * tokens; }
};

namespace serial {

// C = op(A)·op(B), or C += op(A)·op(B) when accumulate is set.
void gemm(const GemmShape& s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

// Writes the output and the softmax probabilities (needed for backward).
void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs);

// Accumulates into dq/dk/dv.
void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv);

}  // namespace serial

namespace omp {

void gemm(const GemmShape& s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs);

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv);

}  // namespace omp

void gemm(const GemmShape& s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs);

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv);

/// True when called from inside an active OpenMP parallel region.
bool in_parallel_region();

}  // namespace fedopal::kernels
