#include "fedopal/lora.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedopal/binio.hpp"
#include "fedopal/error.hpp"
#include "fedopal/rng.hpp"

namespace fedopal {
namespace {

constexpr char kBundleMagic[8] = {'F', 'O', 'P', 'A', 'L', 'B', 'D', 'L'};

}  // namespace

LoRAAdapter init_adapter(std::size_t d, std::size_t k, std::size_t r,
                         double alpha, std::uint64_t seed) {
  if (r < 1 || r > std::min(d, k)) {
    throw ConfigError("adapter rank " + std::to_string(r) +
                      " outside [1, min(" + std::to_string(d) + ", " +
                      std::to_string(k) + ")]");
  }
  Rng rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(r));
  std::vector<double> a(r * k);
  for (auto& v : a) v = rng.normal(0.0, sd);
  LoRAAdapter adapter;
  adapter.A = Tensor::from({r, k}, std::move(a));
  adapter.B = Tensor::zeros({d, r});
  adapter.rank = r;
  adapter.alpha = alpha;
  adapter.enabled = true;
  return adapter;
}

Tensor adapter_contribution(const LoRAAdapter& adapter, const Tensor& x) {
  if (x.cols() != adapter.in_features()) {
    throw ShapeError("adapter input " + shape_str(x.shape()) +
                     " does not match A " + shape_str(adapter.A.shape()));
  }
  return scale(matmul_nt(matmul_nt(x, adapter.A), adapter.B), adapter.scale());
}

Tensor merge_adapter(const Tensor& W0, const LoRAAdapter& adapter) {
  if (W0.shape().size() != 2 || W0.rows() != adapter.out_features() ||
      W0.cols() != adapter.in_features()) {
    throw ShapeError("merge: W0 " + shape_str(W0.shape()) +
                     " does not match adapter B " +
                     shape_str(adapter.B.shape()) + " / A " +
                     shape_str(adapter.A.shape()));
  }
  const Tensor delta = matmul(adapter.B.detach(), adapter.A.detach());
  std::vector<double> merged(W0.data().begin(), W0.data().end());
  const double s = adapter.scale();
  const auto dv = delta.data();
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += s * dv[i];
  return Tensor::from(W0.shape(), std::move(merged));
}

DualAdapterLinear::DualAdapterLinear(Tensor W0, Tensor bias, LoRAAdapter global,
                                     LoRAAdapter personal,
                                     std::size_t layer_index)
    : W0_(std::move(W0)),
      bias_(std::move(bias)),
      global_(std::move(global)),
      personal_(std::move(personal)),
      layer_index_(layer_index) {
  for (const auto* a : {&global_, &personal_}) {
    if (a->out_features() != W0_.rows() || a->in_features() != W0_.cols()) {
      throw ShapeError("adapter " + shape_str(a->B.shape()) + "·" +
                       shape_str(a->A.shape()) + " does not fit W0 " +
                       shape_str(W0_.shape()));
    }
  }
  if (bias_.size() != W0_.rows()) {
    throw ShapeError("bias " + shape_str(bias_.shape()) + " does not fit W0 " +
                     shape_str(W0_.shape()));
  }
}

DualForward DualAdapterLinear::forward(const Tensor& x, bool capture) const {
  if (x.shape().size() != 2 || x.cols() != W0_.cols()) {
    throw ShapeError("dual adapter layer expects [n×" +
                     std::to_string(W0_.cols()) + "] input, got " +
                     shape_str(x.shape()));
  }
  DualForward out;
  out.y = linear(x, W0_, bias_);
  if (global_.enabled) {
    Tensor z = adapter_contribution(global_, x);
    out.y = add(out.y, z);
    if (capture) out.z_global = z;
  }
  if (personal_.enabled) {
    Tensor z = adapter_contribution(personal_, x);
    out.y = add(out.y, z);
    if (capture) out.z_personal = z;
  }
  return out;
}

const char* projection_name(Projection p) {
  switch (p) {
    case Projection::query:
      return "query";
    case Projection::key:
      return "key";
    case Projection::value:
      return "value";
  }
  return "?";
}

const char* slot_name(AdapterSlot s) {
  return s == AdapterSlot::global ? "global" : "personal";
}

// Layout: magic, u32 version, u64 config hash, method string,
//   u32 adapter count, per adapter: u32 block, u8 projection, u8 slot,
//     f64 alpha, u8 enabled, tensor A, tensor B;
//   u32 tensor count, per tensor: name string, tensor.
// Tensors are u32 rank, u64 extents, then f64 values, all little-endian.
void save_bundle(const AdapterBundle& bundle,
                 const std::filesystem::path& path) {
  binio::Writer w(path);
  w.bytes(kBundleMagic, sizeof kBundleMagic);
  w.u32(kBundleVersion);
  w.u64(bundle.config_hash);
  w.str(bundle.method);
  w.u32(static_cast<std::uint32_t>(bundle.adapters.size()));
  for (const auto& [key, a] : bundle.adapters) {
    w.u32(key.block);
    w.u8(static_cast<std::uint8_t>(key.projection));
    w.u8(static_cast<std::uint8_t>(key.slot));
    w.f64(a.alpha);
    w.u8(a.enabled ? 1 : 0);
    w.tensor(a.A);
    w.tensor(a.B);
  }
  w.u32(static_cast<std::uint32_t>(bundle.tensors.size()));
  for (const auto& [name, t] : bundle.tensors) {
    w.str(name);
    w.tensor(t);
  }
  w.finish();
}

AdapterBundle load_bundle(const std::filesystem::path& path,
                          std::optional<std::uint64_t> expected_hash) {
  binio::Reader r(path);
  char magic[sizeof kBundleMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kBundleMagic, sizeof magic) != 0) {
    throw FormatError(path.string() + " is not an adapter bundle");
  }
  const auto version = r.u32();
  if (version != kBundleVersion) {
    throw FormatError(path.string() + ": unsupported bundle version " +
                      std::to_string(version));
  }
  AdapterBundle bundle;
  bundle.config_hash = r.u64();
  if (expected_hash && *expected_hash != bundle.config_hash) {
    throw IncompatibleError(path.string() +
                            ": model configuration hash mismatch");
  }
  bundle.method = r.str();
  const auto n_adapters = r.u32();
  for (std::uint32_t i = 0; i < n_adapters; ++i) {
    AdapterKey key;
    key.block = r.u32();
    const auto proj = r.u8();
    const auto slot = r.u8();
    if (proj > 2 || slot > 1) {
      throw FormatError(path.string() + ": bad adapter key");
    }
    key.projection = static_cast<Projection>(proj);
    key.slot = static_cast<AdapterSlot>(slot);
    LoRAAdapter a;
    a.alpha = r.f64();
    a.enabled = r.u8() != 0;
    a.A = r.tensor();
    a.B = r.tensor();
    if (a.A.shape().size() != 2 || a.B.shape().size() != 2 ||
        a.A.rows() != a.B.cols()) {
      throw FormatError(path.string() + ": inconsistent adapter shapes");
    }
    a.rank = a.A.rows();
    if (!bundle.adapters.emplace(key, std::move(a)).second) {
      throw FormatError(path.string() + ": duplicate adapter entry");
    }
  }
  const auto n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.str();
    auto t = r.tensor();
    if (!bundle.tensors.emplace(std::move(name), std::move(t)).second) {
      throw FormatError(path.string() + ": duplicate tensor entry");
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return bundle;
}

}  // namespace fedopal
