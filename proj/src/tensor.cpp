#include "fedopal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "fedopal/error.hpp"
#include "fedopal/kernels.hpp"

namespace fedopal {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
  bool wants_grad() const { return requires_grad; }
};

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) {
    if (!t.node_) throw ContractError("use of an undefined tensor");
    return t.node_;
  }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

}  // namespace detail

using detail::Access;
using detail::Node;

namespace {

Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Access::wrap(std::move(n));
}

// Creates an op output. History is kept only when some input needs a
// gradient, so frozen sub-graphs cost nothing on the way back.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || Access::node(in)->requires_grad;
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(Access::node(in));
    n->backward_fn = std::move(backward_fn);
  }
  return Access::wrap(std::move(n));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(what) + ": expected a matrix, got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// C = op(A)·op(B) with the backward rules for each transpose combination.
Tensor product(const Tensor& a, const Tensor& b, bool ta, bool tb,
               const char* name) {
  require_matrix(a, name);
  require_matrix(b, name);
  const std::size_t m = ta ? a.shape()[1] : a.shape()[0];
  const std::size_t ka = ta ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = tb ? b.shape()[1] : b.shape()[0];
  const std::size_t n = tb ? b.shape()[0] : b.shape()[1];
  if (ka != kb) {
    throw ShapeError(std::string(name) + ": inner dimensions disagree for " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm({m, n, ka, ta, tb}, a.data(), b.data(), out, false);
  return make_result(
      {m, n}, std::move(out), {a, b}, name, [m, n, k = ka, ta, tb](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        const std::span<const double> g = self.grad;
        if (A.wants_grad()) {
          auto& ga = A.grad_buffer();
          if (!ta) {
            // dA[m×k] = G·op(B)ᵀ
            kernels::gemm({m, k, n, false, !tb}, g, B.data, ga, true);
          } else {
            // dA[k×m] = op(B)·Gᵀ
            kernels::gemm({k, m, n, tb, true}, B.data, g, ga, true);
          }
        }
        if (B.wants_grad()) {
          auto& gb = B.grad_buffer();
          if (!tb) {
            // dB[k×n] = op(A)ᵀ·G
            kernels::gemm({k, n, m, !ta, false}, A.data, g, gb, true);
          } else {
            // dB[n×k] = Gᵀ·op(A)
            kernels::gemm({n, k, m, true, ta}, g, A.data, gb, true);
          }
        }
      });
}

}  // namespace

// ------------------------------------------------------------------- basics

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive");
  }
  std::vector<double> v(numel(shape), value);
  return make_leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive");
  }
  if (values.size() != numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  return make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_leaf({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return Access::node(*this)->shape; }
std::size_t Tensor::size() const { return Access::node(*this)->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.front();
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::data() const {
  return Access::node(*this)->data;
}

std::span<double> Tensor::mutable_data() { return Access::node(*this)->data; }

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  }
  return data()[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }
double Tensor::at(std::size_t r, std::size_t c) const {
  return data()[r * cols() + c];
}

bool Tensor::requires_grad() const { return Access::node(*this)->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  Access::node(*this)->requires_grad = on;
}

bool Tensor::is_leaf() const { return Access::node(*this)->parents.empty(); }
bool Tensor::has_grad() const { return !Access::node(*this)->grad.empty(); }
std::span<const double> Tensor::grad() const { return Access::node(*this)->grad; }
void Tensor::clear_grad() { Access::node(*this)->grad.clear(); }

Tensor Tensor::detach() const {
  const auto& n = Access::node(*this);
  return make_leaf(n->shape, n->data, false);
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (numel(new_shape) != size()) {
    throw ShapeError("reshape " + shape_str(shape()) + " to " +
                     shape_str(new_shape) + " changes the element count");
  }
  return make_result(std::move(new_shape), Access::node(*this)->data, {*this},
                     "reshape", [](Node& self) {
                       Node& x = *self.parents[0];
                       auto& gx = x.grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += self.grad[i];
                     });
}

// --------------------------------------------------------------- operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  return product(a, b, false, false, "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  return product(a, b, false, true, "matmul_nt");
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  return product(a, b, true, false, "matmul_tn");
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::sub:
    case ElementwiseOp::mul:
      break;
    default:
      throw ContractError("elementwise: operation takes no tensor operand");
  }
  require_same_shape(a, b, "elementwise");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = op == ElementwiseOp::add   ? x[i] + y[i]
             : op == ElementwiseOp::sub ? x[i] - y[i]
                                        : x[i] * y[i];
  }
  const char* name = op == ElementwiseOp::add   ? "add"
                     : op == ElementwiseOp::sub ? "sub"
                                                : "mul";
  return make_result(a.shape(), std::move(out), {a, b}, name, [op](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const auto& g = self.grad;
    if (A.wants_grad()) {
      auto& ga = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += op == ElementwiseOp::mul ? g[i] * B.data[i] : g[i];
    }
    if (B.wants_grad()) {
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] += op == ElementwiseOp::mul   ? g[i] * A.data[i]
                 : op == ElementwiseOp::sub ? -g[i]
                                            : g[i];
      }
    }
  });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, double b) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  const char* name = "scale";
  switch (op) {
    case ElementwiseOp::add:
      name = "add_scalar";
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + b;
      break;
    case ElementwiseOp::sub:
      name = "sub_scalar";
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - b;
      break;
    case ElementwiseOp::mul:
    case ElementwiseOp::scale:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * b;
      break;
    case ElementwiseOp::abs:
      name = "abs";
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::abs(x[i]);
      break;
    case ElementwiseOp::gelu:
      name = "gelu";
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_value(x[i]);
      break;
  }
  return make_result(a.shape(), std::move(out), {a}, name, [op, b](Node& self) {
    Node& A = *self.parents[0];
    auto& ga = A.grad_buffer();
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (op) {
        case ElementwiseOp::add:
        case ElementwiseOp::sub:
          ga[i] += g[i];
          break;
        case ElementwiseOp::mul:
        case ElementwiseOp::scale:
          ga[i] += g[i] * b;
          break;
        case ElementwiseOp::abs:
          ga[i] += g[i] * sign(A.data[i]);
          break;
        case ElementwiseOp::gelu:
          ga[i] += g[i] * gelu_derivative(A.data[i]);
          break;
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::add, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::sub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseOp::mul, a, b);
}
Tensor scale(const Tensor& a, double s) {
  return elementwise(ElementwiseOp::scale, a, s);
}
Tensor abs(const Tensor& a) { return elementwise(ElementwiseOp::abs, a); }
Tensor gelu(const Tensor& a) { return elementwise(ElementwiseOp::gelu, a); }

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, "sum", [](Node& self) {
    Node& A = *self.parents[0];
    auto& ga = A.grad_buffer();
    for (auto& v : ga) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_scalars(std::span<const Tensor> terms) {
  if (terms.empty()) throw ContractError("sum_scalars: no terms");
  double s = 0.0;
  for (const auto& t : terms) s += t.item();
  return make_result({}, {s}, {terms.begin(), terms.end()}, "sum_scalars",
                     [](Node& self) {
                       for (auto& p : self.parents) {
                         if (p->wants_grad()) p->grad_buffer()[0] += self.grad[0];
                       }
                     });
}

Tensor add_row_vector(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row_vector");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (bias.size() != d) {
    throw ShapeError("add_row_vector: bias " + shape_str(bias.shape()) +
                     " does not match rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bv = bias.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_row_vector",
                     [n, d](Node& self) {
                       Node& X = *self.parents[0];
                       Node& Bv = *self.parents[1];
                       const auto& g = self.grad;
                       if (X.wants_grad()) {
                         auto& gx = X.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (Bv.wants_grad()) {
                         auto& gb = Bv.grad_buffer();
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < d; ++c)
                             gb[c] += g[r * d + c];
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul_nt(x, weight);
  return bias.defined() ? add_row_vector(y, bias) : y;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::size_t> targets) {
  require_matrix(logits, "softmax_cross_entropy");
  const std::size_t B = logits.rows();
  const std::size_t C = logits.cols();
  if (targets.size() != B) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + shape_str(logits.shape()) + " logits");
  }
  auto probs = std::make_shared<std::vector<double>>(B * C);
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (targets[b] >= C) {
      throw IndexError("softmax_cross_entropy: target " +
                       std::to_string(targets[b]) + " outside [0, " +
                       std::to_string(C) + ")");
    }
    const double* row = z.data() + b * C;
    const double mx = *std::max_element(row, row + C);
    double norm = 0.0;
    for (std::size_t c = 0; c < C; ++c) norm += std::exp(row[c] - mx);
    const double log_norm = std::log(norm);
    for (std::size_t c = 0; c < C; ++c)
      (*probs)[b * C + c] = std::exp(row[c] - mx - log_norm);
    total += log_norm - (row[targets[b]] - mx);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_result({}, {total / static_cast<double>(B)}, {logits},
                     "softmax_cross_entropy",
                     [probs, tgt = std::move(tgt), B, C](Node& self) {
                       Node& L = *self.parents[0];
                       auto& gl = L.grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(B);
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t c = 0; c < C; ++c) {
                           const double onehot = c == tgt[b] ? 1.0 : 0.0;
                           gl[b * C + c] += g * ((*probs)[b * C + c] - onehot);
                         }
                       }
                     });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layernorm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * s;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layernorm",
      [xhat, inv, rows, d](Node& self) {
        Node& X = *self.parents[0];
        Node& G = *self.parents[1];
        Node& Bn = *self.parents[2];
        const auto& g = self.grad;
        if (G.wants_grad()) {
          auto& gg = G.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c)
              gg[c] += g[r * d + c] * (*xhat)[r * d + c];
        }
        if (Bn.wants_grad()) {
          auto& gb = Bn.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
        if (X.wants_grad()) {
          auto& gx = X.grad_buffer();
          const double dn = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0;
            double m2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = g[r * d + c] * G.data[c];
              m1 += dh;
              m2 += dh * (*xhat)[r * d + c];
            }
            m1 /= dn;
            m2 /= dn;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = g[r * d + c] * G.data[c];
              gx[r * d + c] +=
                  (*inv)[r] * (dh - m1 - (*xhat)[r * d + c] * m2);
            }
          }
        }
      });
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v, double eps) {
  if (!(eps > 0.0)) throw ContractError("cosine_similarity: eps must be positive");
  if (u.size() != v.size()) {
    throw ShapeError("cosine_similarity: length mismatch " +
                     shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  }
  const auto a = u.data();
  const auto b = v.data();
  double dot = 0.0;
  double nu2 = 0.0;
  double nv2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    nu2 += a[i] * a[i];
    nv2 += b[i] * b[i];
  }
  const double nu = std::sqrt(nu2);
  const double nv = std::sqrt(nv2);
  const bool degenerate = nu == 0.0 || nv == 0.0;
  const double du = std::max(nu, eps);
  const double dv = std::max(nv, eps);
  const double c = degenerate ? 0.0 : dot / (du * dv);
  return make_result(
      {}, {c}, {u, v}, "cosine_similarity",
      [degenerate, c, nu, nv, du, dv, eps](Node& self) {
        if (degenerate) return;
        Node& U = *self.parents[0];
        Node& V = *self.parents[1];
        const double g = self.grad[0];
        if (U.wants_grad()) {
          auto& gu = U.grad_buffer();
          const double radial = nu >= eps ? c / (nu * nu) : 0.0;
          for (std::size_t i = 0; i < gu.size(); ++i)
            gu[i] += g * (V.data[i] / (du * dv) - radial * U.data[i]);
        }
        if (V.wants_grad()) {
          auto& gv = V.grad_buffer();
          const double radial = nv >= eps ? c / (nv * nv) : 0.0;
          for (std::size_t i = 0; i < gv.size(); ++i)
            gv[i] += g * (U.data[i] / (du * dv) - radial * V.data[i]);
        }
      });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t batch, std::size_t heads) {
  require_matrix(q, "multi_head_attention");
  require_same_shape(q, k, "multi_head_attention");
  require_same_shape(q, v, "multi_head_attention");
  const std::size_t rows = q.rows();
  const std::size_t width = q.cols();
  if (batch == 0 || heads == 0 || rows % batch != 0 || width % heads != 0) {
    throw ShapeError("multi_head_attention: " + shape_str(q.shape()) +
                     " does not split into " + std::to_string(batch) +
                     " examples and " + std::to_string(heads) + " heads");
  }
  const kernels::AttentionShape s{batch, rows / batch, heads, width / heads};
  auto probs = std::make_shared<std::vector<double>>(s.prob_size());
  std::vector<double> out(rows * width);
  kernels::attention_forward(s, q.data(), k.data(), v.data(), out, *probs);
  return make_result(
      q.shape(), std::move(out), {q, k, v}, "multi_head_attention",
      [s, probs](Node& self) {
        Node& Q = *self.parents[0];
        Node& K = *self.parents[1];
        Node& V = *self.parents[2];
        // Inputs that need no gradient get a throwaway buffer.
        std::vector<double> sq, sk, sv;
        auto target = [](Node& n, std::vector<double>& scratch) {
          if (n.wants_grad()) return std::span<double>(n.grad_buffer());
          scratch.assign(n.data.size(), 0.0);
          return std::span<double>(scratch);
        };
        const auto dq = target(Q, sq);
        const auto dk = target(K, sk);
        const auto dv = target(V, sv);
        kernels::attention_backward(s, Q.data, K.data, V.data, *probs,
                                    self.grad, dq, dk, dv);
      });
}

Tensor tile_rows(const Tensor& x, std::size_t times) {
  require_matrix(x, "tile_rows");
  if (times == 0) throw ShapeError("tile_rows: zero copies");
  const std::size_t block = x.size();
  std::vector<double> out;
  out.reserve(block * times);
  for (std::size_t r = 0; r < times; ++r)
    out.insert(out.end(), x.data().begin(), x.data().end());
  return make_result({x.rows() * times, x.cols()}, std::move(out), {x},
                     "tile_rows", [block, times](Node& self) {
                       auto& gx = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < times; ++r)
                         for (std::size_t i = 0; i < block; ++i)
                           gx[i] += self.grad[r * block + i];
                     });
}

Tensor mean_pool_rows(const Tensor& x, std::size_t groups) {
  require_matrix(x, "mean_pool_rows");
  if (groups == 0 || x.rows() % groups != 0) {
    throw ShapeError("mean_pool_rows: " + shape_str(x.shape()) +
                     " does not split into " + std::to_string(groups) +
                     " groups");
  }
  const std::size_t per = x.rows() / groups;
  const std::size_t d = x.cols();
  const double w = 1.0 / static_cast<double>(per);
  std::vector<double> out(groups * d, 0.0);
  const auto xv = x.data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t t = 0; t < per; ++t)
      for (std::size_t c = 0; c < d; ++c)
        out[g * d + c] += xv[(g * per + t) * d + c];
  for (auto& o : out) o *= w;
  return make_result({groups, d}, std::move(out), {x}, "mean_pool_rows",
                     [groups, per, d, w](Node& self) {
                       auto& gx = self.parents[0]->grad_buffer();
                       for (std::size_t g = 0; g < groups; ++g)
                         for (std::size_t t = 0; t < per; ++t)
                           for (std::size_t c = 0; c < d; ++c)
                             gx[(g * per + t) * d + c] += w * self.grad[g * d + c];
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin >= end || end > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  const std::size_t d = x.cols();
  std::vector<double> out(x.data().begin() + begin * d,
                          x.data().begin() + end * d);
  return make_result({end - begin, d}, std::move(out), {x}, "slice_rows",
                     [offset = begin * d](Node& self) {
                       auto& gx = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         gx[offset + i] += self.grad[i];
                     });
}

// ----------------------------------------------------------- differentiation

GradientTape::GradientTape(const Tensor& loss) : loss_(Access::node(loss)) {
  // Iterative post-order DFS: every node lands after all of its inputs.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (loss_->requires_grad) stack.emplace_back(loss_.get(), 0);
  seen.insert(loss_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

std::vector<std::string> GradientTape::op_names() const {
  std::vector<std::string> names;
  names.reserve(order_.size());
  for (auto* n : order_) names.emplace_back(n->op);
  return names;
}

void GradientTape::run() {
  if (loss_->data.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        shape_str(loss_->shape));
  }
  // Intermediate gradients restart from zero on every pass; leaves keep
  // accumulating across passes.
  for (auto* n : order_) {
    if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
  }
  if (order_.empty()) return;
  loss_->grad_buffer()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        shape_str(loss.shape()));
  }
  GradientTape tape(loss);
  tape.run();
}

double grad_check(const std::function<Tensor()>& f, Tensor x, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  if (!x.is_leaf()) throw ContractError("grad_check: x must be a leaf");
  const bool had = x.requires_grad();
  x.set_requires_grad(true);
  x.clear_grad();
  const Tensor loss = f();
  if (loss.size() != 1) {
    throw ContractError("grad_check: function is not scalar-valued, shape " +
                        shape_str(loss.shape()));
  }
  backward(loss);
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  x.clear_grad();
  x.set_requires_grad(had);

  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double fp = f().item();
    values[i] = saved - step;
    const double fm = f().item();
    values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

void sgd_step(std::span<Tensor> params, std::span<Tensor> velocities,
              double lr, double momentum) {
  if (params.size() != velocities.size()) {
    throw ContractError("sgd_step: " + std::to_string(params.size()) +
                        " parameters but " + std::to_string(velocities.size()) +
                        " velocities");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != velocities[i].shape()) {
      throw ShapeError("sgd_step: velocity " + shape_str(velocities[i].shape()) +
                       " does not match parameter " +
                       shape_str(params[i].shape()));
    }
    if (!params[i].has_grad()) {
      throw ContractError("sgd_step: parameter " + std::to_string(i) +
                          " has no gradient");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto v = velocities[i].mutable_data();
    const auto g = params[i].grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + g[j];
      p[j] -= lr * v[j];
    }
    params[i].clear_grad();
  }
}

}  // namespace fedopal
