#pragma once

// Dense 64-bit tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle onto a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; `backward`
// orders the reachable nodes topologically (the gradient tape) and replays
// the rules in reverse. Graphs built on different threads share nothing, so
// independent clients can train concurrently.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fedopal {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
struct Access;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;  // extent of axis 0 (1 for scalars)
  std::size_t cols() const;  // extent of the last axis (1 for scalars)

  std::span<const double> data() const;
  // Mutable access is for leaves only: parameters, inputs, optimizer state.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void clear_grad();

  /// Same values, fresh leaf, no history.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  /// Identity of the underlying node; two handles alias iff equal.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct detail::Access;
};

// ---------------------------------------------------------------- operations

Tensor matmul(const Tensor& a, const Tensor& b);     // a·b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a·bᵀ
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // aᵀ·b

enum class ElementwiseOp { add, sub, mul, scale, abs, gelu };

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseOp op, const Tensor& a, double b = 0.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum of scalar tensors in one node.
Tensor sum_scalars(std::span<const Tensor> terms);

/// x[n×d] + bias[d] on every row.
Tensor add_row_vector(const Tensor& x, const Tensor& bias);
/// x·Wᵀ + bias for W[d×k]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Mean over the batch of −log softmax(logits)[target].
Tensor softmax_cross_entropy(const Tensor& logits,
                             std::span<const std::size_t> targets);

inline constexpr double kDefaultEps = 1e-8;

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = kDefaultEps);

/// u·v / (max(|u|,eps)·max(|v|,eps)); zero, with zero gradient, when either
/// vector is identically zero.
Tensor cosine_similarity(const Tensor& u, const Tensor& v,
                         double eps = kDefaultEps);

/// Scaled dot-product attention over `heads` heads for q/k/v laid out as
/// [batch·tokens × width].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t batch, std::size_t heads);

/// Stacks `times` copies of x[T×d] into [times·T × d].
Tensor tile_rows(const Tensor& x, std::size_t times);
/// [groups·T × d] → [groups × d] by averaging each block of T rows.
Tensor mean_pool_rows(const Tensor& x, std::size_t groups);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

// ------------------------------------------------------------ differentiation

/// Reverse topological replay of every operation reachable from a loss.
class GradientTape {
 public:
  explicit GradientTape(const Tensor& loss);

  std::size_t size() const { return order_.size(); }
  /// Operation names in recording (topological) order.
  std::vector<std::string> op_names() const;
  void run();

 private:
  std::shared_ptr<detail::Node> loss_;
  std::vector<detail::Node*> order_;
};

/// Accumulates ∂loss/∂leaf into every requires_grad leaf reachable from loss.
void backward(const Tensor& loss);

/// Worst relative error between the tape gradient of f with respect to x and
/// central differences with the given step. f must rebuild its graph on
/// every call and read x's current values.
double grad_check(const std::function<Tensor()>& f, Tensor x, double step);

/// Classical momentum: v ← γv + g, p ← p − ηv, then gradients are cleared.
void sgd_step(std::span<Tensor> params, std::span<Tensor> velocities,
              double lr, double momentum);

}  // namespace fedopal
