#include "fedopal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fedopal/federation.hpp"
#include "fedopal/model.hpp"
#include "fedopal/regularizers.hpp"
#include "fedopal/rng.hpp"
#include "fedopal/tensor.hpp"

namespace fedopal {
namespace {

class Suite {
 public:
  Suite(double step, std::uint64_t seed) : step_(step), rng_(seed) {}

  // Entries uniform in [-1, 1] with |x| >= 0.05, clear of kinks at 0.
  Tensor input(Shape shape) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
      x = rng_.uniform(0.05, 1.0);
      if (rng_.uniform() < 0.5) x = -x;
    }
    return Tensor::from(std::move(shape), std::move(v));
  }

  // Random projection to a scalar, so every output entry matters. The weight
  // is drawn on first use and fixed for the rest of the current case.
  Tensor project(const Tensor& y) {
    if (!weight_.defined() || weight_.shape() != y.shape()) weight_ = input(y.shape());
    return sum(mul(y, weight_));
  }

  void check(const std::string& name, const std::function<Tensor()>& f,
             std::vector<Tensor> inputs) {
    GradCheckCase c{name, 0.0, 0};
    for (auto& x : inputs) {
      c.max_rel_error = std::max(c.max_rel_error, grad_check(f, x, step_));
      c.coordinates += x.size();
    }
    cases_.push_back(std::move(c));
    weight_ = Tensor();
  }

  std::vector<GradCheckCase> take() { return std::move(cases_); }
  Rng& rng() { return rng_; }

 private:
  double step_;
  Rng rng_;
  Tensor weight_;
  std::vector<GradCheckCase> cases_;
};

// One dual-adapter transformer block with random nonzero adapters, trained
// on task + both orthogonality losses.
void transformer_layer_case(Suite& s) {
  ModelConfig mc;
  mc.image_size = 4;
  mc.patch_size = 2;
  mc.channels = 2;
  mc.embed_dim = 8;
  mc.num_heads = 2;
  mc.num_blocks = 1;
  mc.mlp_dim = 12;
  mc.num_classes = 3;
  mc.rank_global = 2;
  mc.rank_personal = 3;
  mc.seed = 11;
  VitModel model(mc);
  for (const auto& [name, t] : model.named_tensors()) {
    if (name.find(".B") != std::string::npos) {
      model.assign(name, scale(s.input(t.shape()), 0.5));
    }
  }
  const Tensor batch = s.input({2, mc.channels, mc.image_size, mc.image_size});
  const std::vector<std::size_t> labels = {0, 2};
  auto f = [&] {
    const ModelOutput out = model.forward(batch, true);
    std::vector<AdapterPair> pairs;
    for (auto& [g, p] : model.adapter_a_pairs()) pairs.push_back({g, p});
    const Tensor terms[] = {softmax_cross_entropy(out.logits, labels),
                            orth_repr_loss(out.capture),
                            scale(orth_weight_loss(pairs), 0.1)};
    return sum_scalars(terms);
  };
  std::vector<Tensor> adapters;
  std::vector<Tensor> rest;
  for (const auto& [name, t] : model.named_tensors()) {
    // Softmax over keys is shift-invariant, so the key bias has an exactly
    // zero gradient and a relative error there only measures roundoff.
    if (name.ends_with("key.bias")) continue;
    (name.find("blocks.0.") == 0 &&
             (name.find(".global.") != std::string::npos ||
              name.find(".personal.") != std::string::npos)
         ? adapters
         : rest)
        .push_back(t);
  }
  s.check("dual-adapter layer: adapters", f, adapters);
  s.check("dual-adapter layer: base and head", f, rest);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(double step, std::uint64_t seed) {
  Suite s(step, seed);

  {
    Tensor a = s.input({3, 4}), b = s.input({4, 2});
    s.check("matmul", [&] { return s.project(matmul(a, b)); }, {a, b});
  }
  {
    Tensor a = s.input({3, 4}), b = s.input({2, 4});
    s.check("matmul_nt", [&] { return s.project(matmul_nt(a, b)); }, {a, b});
  }
  {
    Tensor a = s.input({4, 3}), b = s.input({4, 2});
    s.check("matmul_tn", [&] { return s.project(matmul_tn(a, b)); }, {a, b});
  }
  {
    Tensor a = s.input({2, 3}), b = s.input({2, 3});
    const Tensor w = s.input({2, 3});
    s.check("add", [&] { return sum(mul(add(a, b), w)); }, {a, b});
    s.check("sub", [&] { return sum(mul(sub(a, b), w)); }, {a, b});
    s.check("mul", [&] { return sum(mul(mul(a, b), w)); }, {a, b});
    s.check("scale", [&] { return sum(mul(scale(a, -1.7), w)); }, {a});
    s.check("abs", [&] { return sum(mul(abs(a), w)); }, {a});
    s.check("gelu", [&] { return sum(mul(gelu(scale(a, 2.0)), w)); }, {a});
    s.check("mean", [&] { return mean(mul(a, w)); }, {a});
    s.check("reshape", [&] { return s.project(a.reshape({3, 2})); }, {a});
  }
  {
    Tensor x = s.input({4, 3}), bias = s.input({3}), w = s.input({2, 3});
    s.check("add_row_vector", [&] { return s.project(add_row_vector(x, bias)); },
            {x, bias});
    Tensor b2 = s.input({2});
    s.check("linear", [&] { return s.project(linear(x, w, b2)); }, {x, w, b2});
    s.check("tile_rows", [&] { return s.project(tile_rows(x, 3)); }, {x});
    s.check("mean_pool_rows", [&] { return s.project(mean_pool_rows(x, 2)); }, {x});
    s.check("slice_rows", [&] { return s.project(slice_rows(x, 1, 3)); }, {x});
  }
  {
    Tensor a = s.input({1}), b = s.input({1}), c = s.input({1});
    s.check("sum_scalars", [&] {
      const Tensor t[] = {mul(a, b), c, mul(a, a)};
      return sum_scalars(t);
    }, {a, b, c});
  }
  {
    Tensor logits = s.input({4, 3});
    const std::vector<std::size_t> targets = {0, 2, 1, 2};
    s.check("softmax_cross_entropy",
            [&] { return softmax_cross_entropy(scale(logits, 3.0), targets); },
            {logits});
  }
  {
    Tensor x = s.input({3, 5}), g = s.input({5}), b = s.input({5});
    s.check("layernorm", [&] { return s.project(layernorm(x, g, b)); }, {x, g, b});
  }
  {
    Tensor u = s.input({6}), v = s.input({6});
    s.check("cosine_similarity", [&] { return cosine_similarity(u, v); }, {u, v});
  }
  {
    // batch 2, tokens 3, 2 heads of width 2
    Tensor q = s.input({6, 4}), k = s.input({6, 4}), v = s.input({6, 4});
    s.check("multi_head_attention",
            [&] { return s.project(multi_head_attention(q, k, v, 2, 2)); }, {q, k, v});
  }
  {
    Tensor ag1 = s.input({2, 3}), ap1 = s.input({2, 3});
    Tensor ag2 = s.input({2, 3}), ap2 = s.input({3, 3});
    s.check("orth_weight_loss", [&] {
      return orth_weight_loss({{ag1, ap1}, {ag2, ap2}});
    }, {ag1, ap1, ag2, ap2});
  }
  {
    RepresentationCapture cap;
    cap.layers = 2;
    cap.batch = 2;
    std::vector<Tensor> zs;
    for (std::size_t i = 0; i < 4; ++i) {
      cap.pairs.push_back({s.input({5}), s.input({5})});
      zs.push_back(cap.pairs.back().global);
      zs.push_back(cap.pairs.back().personal);
    }
    s.check("orth_repr_loss", [&] { return orth_repr_loss(cap); }, zs);
  }
  transformer_layer_case(s);
  return s.take();
}

}  // namespace fedopal
