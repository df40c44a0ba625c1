#include "fedopal/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedopal::kernels {
namespace {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

// Transposes a rows×cols row-major matrix.
std::vector<double> transpose(std::span<const double> x, std::size_t rows,
                              std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      t[c * rows + r] = x[r * cols + c];
    }
  }
  return t;
}

// Operands normalized to A[m×k], B[k×n] row-major.
struct Packed {
  std::vector<double> a_storage;
  std::vector<double> b_storage;
  std::span<const double> a;
  std::span<const double> b;
};

Packed pack(const GemmShape& s, std::span<const double> a,
            std::span<const double> b) {
  Packed p;
  if (s.trans_a) {
    p.a_storage = transpose(a, s.k, s.m);
    p.a = p.a_storage;
  } else {
    p.a = a;
  }
  if (s.trans_b) {
    p.b_storage = transpose(b, s.n, s.k);
    p.b = p.b_storage;
  } else {
    p.b = b;
  }
  return p;
}

// One output row. Each element is summed over p in ascending order starting
// from zero, which is what keeps the serial and parallel paths identical.
void gemm_row(const GemmShape& s, const Packed& p, std::size_t i,
              std::span<double> c, bool accumulate, std::vector<double>& row) {
  std::fill(row.begin(), row.end(), 0.0);
  const double* arow = p.a.data() + i * s.k;
  for (std::size_t q = 0; q < s.k; ++q) {
    const double aiq = arow[q];
    const double* brow = p.b.data() + q * s.n;
    for (std::size_t j = 0; j < s.n; ++j) {
      row[j] += aiq * brow[j];
    }
  }
  double* crow = c.data() + i * s.n;
  if (accumulate) {
    for (std::size_t j = 0; j < s.n; ++j) crow[j] += row[j];
  } else {
    std::copy(row.begin(), row.end(), crow);
  }
}

void attention_forward_head(const AttentionShape& s, std::size_t b,
                            std::size_t h, std::span<const double> q,
                            std::span<const double> k,
                            std::span<const double> v, std::span<double> out,
                            std::span<double> probs) {
  const std::size_t T = s.tokens;
  const std::size_t D = s.head_dim;
  const std::size_t W = s.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  double* P = probs.data() + (b * s.heads + h) * T * T;
  for (std::size_t t = 0; t < T; ++t) {
    const double* qt = q.data() + (b * T + t) * W + h * D;
    double* prow = P + t * T;
    double mx = -INFINITY;
    for (std::size_t u = 0; u < T; ++u) {
      const double* ku = k.data() + (b * T + u) * W + h * D;
      double dot = 0.0;
      for (std::size_t e = 0; e < D; ++e) dot += qt[e] * ku[e];
      prow[u] = dot * scale;
      mx = std::max(mx, prow[u]);
    }
    double z = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      prow[u] = std::exp(prow[u] - mx);
      z += prow[u];
    }
    for (std::size_t u = 0; u < T; ++u) prow[u] /= z;
    double* ot = out.data() + (b * T + t) * W + h * D;
    std::fill(ot, ot + D, 0.0);
    for (std::size_t u = 0; u < T; ++u) {
      const double* vu = v.data() + (b * T + u) * W + h * D;
      for (std::size_t e = 0; e < D; ++e) ot[e] += prow[u] * vu[e];
    }
  }
}

void attention_backward_head(const AttentionShape& s, std::size_t b,
                             std::size_t h, std::span<const double> q,
                             std::span<const double> k,
                             std::span<const double> v,
                             std::span<const double> probs,
                             std::span<const double> dout,
                             std::span<double> dq, std::span<double> dk,
                             std::span<double> dv) {
  const std::size_t T = s.tokens;
  const std::size_t D = s.head_dim;
  const std::size_t W = s.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  const double* P = probs.data() + (b * s.heads + h) * T * T;
  std::vector<double> ds(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* prow = P + t * T;
    const double* got = dout.data() + (b * T + t) * W + h * D;
    double weighted = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      const double* vu = v.data() + (b * T + u) * W + h * D;
      double dp = 0.0;
      for (std::size_t e = 0; e < D; ++e) dp += got[e] * vu[e];
      ds[u] = dp;
      weighted += prow[u] * dp;
    }
    for (std::size_t u = 0; u < T; ++u) {
      ds[u] = prow[u] * (ds[u] - weighted) * scale;
    }
    const double* qt = q.data() + (b * T + t) * W + h * D;
    double* dqt = dq.data() + (b * T + t) * W + h * D;
    for (std::size_t u = 0; u < T; ++u) {
      const double* ku = k.data() + (b * T + u) * W + h * D;
      double* dku = dk.data() + (b * T + u) * W + h * D;
      double* dvu = dv.data() + (b * T + u) * W + h * D;
      for (std::size_t e = 0; e < D; ++e) {
        dqt[e] += ds[u] * ku[e];
        dku[e] += ds[u] * qt[e];
        dvu[e] += prow[u] * got[e];
      }
    }
  }
}

}  // namespace

bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

namespace serial {

void gemm(const GemmShape& s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  const Packed p = pack(s, a, b);
  std::vector<double> row(s.n);
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(s, p, i, c, accumulate, row);
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs) {
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      attention_forward_head(s, b, h, q, k, v, out, probs);
    }
  }
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv) {
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      attention_backward_head(s, b, h, q, k, v, probs, dout, dq, dk, dv);
    }
  }
}

}  // namespace serial

namespace omp {

void gemm(const GemmShape& s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  const Packed p = pack(s, a, b);
  const auto rows = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel
  {
    std::vector<double> row(s.n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      gemm_row(s, p, static_cast<std::size_t>(i), c, accumulate, row);
    }
  }
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs) {
  const auto units = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t w = 0; w < units; ++w) {
    const auto unit = static_cast<std::size_t>(w);
    attention_forward_head(s, unit / s.heads, unit % s.heads, q, k, v, out,
                           probs);
  }
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv) {
  const auto units = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t w = 0; w < units; ++w) {
    const auto unit = static_cast<std::size_t>(w);
    attention_backward_head(s, unit / s.heads, unit % s.heads, q, k, v, probs,
                            dout, dq, dk, dv);
  }
}

}  // namespace omp

void gemm(const GemmShape& s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  if (in_parallel_region() || s.m * s.n * s.k < kParallelWork) {
    serial::gemm(s, a, b, c, accumulate);
  } else {
    omp::gemm(s, a, b, c, accumulate);
  }
}

void attention_forward(const AttentionShape& s, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs) {
  if (in_parallel_region() || s.batch * s.heads < 2) {
    serial::attention_forward(s, q, k, v, out, probs);
  } else {
    omp::attention_forward(s, q, k, v, out, probs);
  }
}

void attention_backward(const AttentionShape& s, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq,
                        std::span<double> dk, std::span<double> dv) {
  if (in_parallel_region() || s.batch * s.heads < 2) {
    serial::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
  } else {
    omp::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
  }
}

}  // namespace fedopal::kernels
