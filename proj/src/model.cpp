#include "fedopal/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedopal/error.hpp"
#include "fedopal/rng.hpp"

namespace fedopal {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor gaussian(Shape shape, double sd, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v));
}

double fan_in_sd(std::size_t fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

constexpr std::array<Projection, 3> kProjections = {
    Projection::query, Projection::key, Projection::value};

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string(field) + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(channels, "channels");
  positive(embed_dim, "embed_dim");
  positive(num_heads, "num_heads");
  positive(num_blocks, "num_blocks");
  positive(mlp_dim, "mlp_dim");
  positive(num_classes, "num_classes");
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  for (auto [r, field] : {std::pair{rank_global, "rank_global"},
                          std::pair{rank_personal, "rank_personal"}}) {
    if (r < 1 || r > embed_dim) {
      throw ConfigError(std::string(field) + " must lie in [1, embed_dim]");
    }
  }
  if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
}

std::uint64_t ModelConfig::backbone_hash() const {
  std::ostringstream os;
  os << "vit-backbone:image=" << image_size << ";patch=" << patch_size
     << ";channels=" << channels << ";dim=" << embed_dim
     << ";heads=" << num_heads << ";blocks=" << num_blocks
     << ";mlp=" << mlp_dim;
  return fnv1a(os.str());
}

std::uint64_t ModelConfig::config_hash() const {
  std::ostringstream os;
  os.precision(17);
  os << "vit:" << backbone_hash() << ";classes=" << num_classes
     << ";rg=" << rank_global << ";rp=" << rank_personal << ";alpha=" << alpha;
  return fnv1a(os.str());
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  const std::size_t per_block = 4 * d                      // two layernorms
                                + 3 * (d * d + d)          // q/k/v base
                                + 3 * 2 * c.rank_global * d  // global A, B
                                + 3 * 2 * c.rank_personal * d
                                + d * d + d                // attention output
                                + c.mlp_dim * d + c.mlp_dim  // fc1
                                + d * c.mlp_dim + d;       // fc2
  return c.patch_dim() * d + d + c.tokens() * d + c.num_blocks * per_block +
         2 * d + c.num_classes * d + c.num_classes;
}

Tensor patchify(const Tensor& image, const ModelConfig& config) {
  const auto& s = image.shape();
  const std::size_t S = config.image_size;
  const std::size_t P = config.patch_size;
  const std::size_t C = config.channels;
  if (s.size() != 3 || s[0] != C || s[1] != S || s[2] != S) {
    throw ShapeError("patchify expects [" + std::to_string(C) + "x" +
                     std::to_string(S) + "x" + std::to_string(S) +
                     "], got " + shape_str(s));
  }
  const std::size_t grid = S / P;
  const auto x = image.data();
  std::vector<double> out(config.tokens() * config.patch_dim());
  std::size_t o = 0;
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            out[o++] = x[(c * S + gy * P + py) * S + gx * P + px];
  return Tensor::from({config.tokens(), config.patch_dim()}, std::move(out));
}

Tensor unpatchify(const Tensor& tokens, const ModelConfig& config) {
  if (tokens.shape() != Shape{config.tokens(), config.patch_dim()}) {
    throw ShapeError("unpatchify: unexpected token shape " +
                     shape_str(tokens.shape()));
  }
  const std::size_t S = config.image_size;
  const std::size_t P = config.patch_size;
  const std::size_t C = config.channels;
  const std::size_t grid = S / P;
  const auto t = tokens.data();
  std::vector<double> out(C * S * S);
  std::size_t o = 0;
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            out[(c * S + gy * P + py) * S + gx * P + px] = t[o++];
  return Tensor::from({C, S, S}, std::move(out));
}

VitModel::VitModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  Rng rng(mix_seed(config_.seed, 0x5eed));
  patch_weight_ = gaussian({d, config_.patch_dim()},
                           fan_in_sd(config_.patch_dim()), rng);
  patch_bias_ = Tensor::zeros({d});
  pos_ = gaussian({config_.tokens(), d}, 0.1, rng);
  blocks_.resize(config_.num_blocks);
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    Block& blk = blocks_[b];
    blk.ln1_gain = Tensor::full({d}, 1.0);
    blk.ln1_bias = Tensor::zeros({d});
    for (std::size_t p = 0; p < 3; ++p) {
      const std::size_t layer = 3 * b + p;
      Tensor w = gaussian({d, d}, fan_in_sd(d), rng);
      auto g = init_adapter(d, d, config_.rank_global,
                            config_.alpha_for(config_.rank_global),
                            mix_seed(config_.seed, layer, 1));
      auto q = init_adapter(d, d, config_.rank_personal,
                            config_.alpha_for(config_.rank_personal),
                            mix_seed(config_.seed, layer, 2));
      blk.qkv[p] = DualAdapterLinear(std::move(w), Tensor::zeros({d}),
                                     std::move(g), std::move(q), layer);
    }
    blk.attn_out_weight = gaussian({d, d}, fan_in_sd(d), rng);
    blk.attn_out_bias = Tensor::zeros({d});
    blk.ln2_gain = Tensor::full({d}, 1.0);
    blk.ln2_bias = Tensor::zeros({d});
    blk.fc1_weight = gaussian({config_.mlp_dim, d}, fan_in_sd(d), rng);
    blk.fc1_bias = Tensor::zeros({config_.mlp_dim});
    blk.fc2_weight =
        gaussian({d, config_.mlp_dim}, fan_in_sd(config_.mlp_dim), rng);
    blk.fc2_bias = Tensor::zeros({d});
  }
  final_gain_ = Tensor::full({d}, 1.0);
  final_bias_ = Tensor::zeros({d});
  reset_head(mix_seed(config_.seed, 0x4ead));

  const ParamPartition part = param_partition(*this);
  std::set<std::string> trainable(part.head.begin(), part.head.end());
  trainable.insert(part.adapters_global.begin(), part.adapters_global.end());
  trainable.insert(part.adapters_personal.begin(), part.adapters_personal.end());
  set_trainable(trainable);
}

void VitModel::reset_head(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = config_.embed_dim;
  Tensor w = gaussian({config_.num_classes, d}, fan_in_sd(d), rng);
  if (head_weight_.defined() && head_weight_.shape() == w.shape()) {
    assign("head.weight", w);
    assign("head.bias", Tensor::zeros({config_.num_classes}));
  } else {
    head_weight_ = w;
    head_bias_ = Tensor::zeros({config_.num_classes});
  }
}

ModelOutput VitModel::forward(const Tensor& batch, bool capture) const {
  const auto& s = batch.shape();
  const std::size_t S = config_.image_size;
  if (s.size() != 4 || s[1] != config_.channels || s[2] != S || s[3] != S) {
    throw ShapeError("model expects [B x " + std::to_string(config_.channels) +
                     "x" + std::to_string(S) + "x" + std::to_string(S) +
                     "] input, got " + shape_str(s));
  }
  const std::size_t B = s[0];
  const std::size_t T = config_.tokens();
  const std::size_t image_len = config_.channels * S * S;

  std::vector<double> patches;
  patches.reserve(B * T * config_.patch_dim());
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> img(batch.data().begin() + b * image_len,
                            batch.data().begin() + (b + 1) * image_len);
    const Tensor t = patchify(
        Tensor::from({config_.channels, S, S}, std::move(img)), config_);
    patches.insert(patches.end(), t.data().begin(), t.data().end());
  }
  const Tensor tokens =
      Tensor::from({B * T, config_.patch_dim()}, std::move(patches));

  ModelOutput out;
  const bool collect = capture && slot_enabled(AdapterSlot::global) &&
                       slot_enabled(AdapterSlot::personal);
  if (collect) {
    out.capture.layers = config_.adapted_layers();
    out.capture.batch = B;
    out.capture.pairs.resize(out.capture.layers * B);
  }

  Tensor x = add(linear(tokens, patch_weight_, patch_bias_), tile_rows(pos_, B));
  for (const Block& blk : blocks_) {
    const Tensor h = layernorm(x, blk.ln1_gain, blk.ln1_bias);
    std::array<Tensor, 3> qkv;
    for (std::size_t p = 0; p < 3; ++p) {
      DualForward f = blk.qkv[p].forward(h, collect);
      qkv[p] = f.y;
      if (collect) {
        const std::size_t layer = blk.qkv[p].layer_index();
        for (std::size_t j = 0; j < B; ++j) {
          auto& pair = out.capture.pairs[layer * B + j];
          pair.global = slice_rows(f.z_global, j * T, (j + 1) * T);
          pair.personal = slice_rows(f.z_personal, j * T, (j + 1) * T);
        }
      }
    }
    const Tensor attn =
        multi_head_attention(qkv[0], qkv[1], qkv[2], B, config_.num_heads);
    x = add(x, linear(attn, blk.attn_out_weight, blk.attn_out_bias));
    const Tensor h2 = layernorm(x, blk.ln2_gain, blk.ln2_bias);
    const Tensor m = linear(gelu(linear(h2, blk.fc1_weight, blk.fc1_bias)),
                            blk.fc2_weight, blk.fc2_bias);
    x = add(x, m);
  }
  const Tensor pooled =
      mean_pool_rows(layernorm(x, final_gain_, final_bias_), B);
  out.logits = linear(pooled, head_weight_, head_bias_);
  return out;
}

std::vector<std::pair<std::string, Tensor>> VitModel::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch.weight", patch_weight_);
  out.emplace_back("patch.bias", patch_bias_);
  out.emplace_back("pos", pos_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    out.emplace_back(pre + "ln1.gain", blk.ln1_gain);
    out.emplace_back(pre + "ln1.bias", blk.ln1_bias);
    for (std::size_t p = 0; p < 3; ++p) {
      const std::string proj = pre + projection_name(kProjections[p]) + ".";
      const auto& layer = blk.qkv[p];
      out.emplace_back(proj + "W0", layer.W0());
      out.emplace_back(proj + "bias", layer.bias());
      for (auto slot : {AdapterSlot::global, AdapterSlot::personal}) {
        const auto& a = layer.adapter(slot);
        out.emplace_back(proj + slot_name(slot) + ".A", a.A);
        out.emplace_back(proj + slot_name(slot) + ".B", a.B);
      }
    }
    out.emplace_back(pre + "attn_out.weight", blk.attn_out_weight);
    out.emplace_back(pre + "attn_out.bias", blk.attn_out_bias);
    out.emplace_back(pre + "ln2.gain", blk.ln2_gain);
    out.emplace_back(pre + "ln2.bias", blk.ln2_bias);
    out.emplace_back(pre + "mlp.fc1.weight", blk.fc1_weight);
    out.emplace_back(pre + "mlp.fc1.bias", blk.fc1_bias);
    out.emplace_back(pre + "mlp.fc2.weight", blk.fc2_weight);
    out.emplace_back(pre + "mlp.fc2.bias", blk.fc2_bias);
  }
  out.emplace_back("final_ln.gain", final_gain_);
  out.emplace_back("final_ln.bias", final_bias_);
  out.emplace_back("head.weight", head_weight_);
  out.emplace_back("head.bias", head_bias_);
  return out;
}

Tensor VitModel::tensor(const std::string& name) const {
  for (auto& [n, t] : named_tensors()) {
    if (n == name) return t;
  }
  throw ContractError("model has no tensor named " + name);
}

void VitModel::assign(const std::string& name, const Tensor& values) {
  Tensor t = tensor(name);
  if (t.shape() != values.shape()) {
    throw IncompatibleError("tensor " + name + " has shape " +
                            shape_str(t.shape()) + ", incoming " +
                            shape_str(values.shape()));
  }
  std::copy(values.data().begin(), values.data().end(),
            t.mutable_data().begin());
}

void VitModel::set_trainable(const std::set<std::string>& names) {
  std::size_t found = 0;
  for (auto& [n, t] : named_tensors()) {
    const bool on = names.count(n) != 0;
    found += on ? 1 : 0;
    t.set_requires_grad(on);
  }
  if (found != names.size()) {
    throw ContractError("set_trainable: unknown tensor name in request");
  }
}

void VitModel::set_slot_enabled(AdapterSlot slot, bool enabled) {
  for (auto& blk : blocks_)
    for (auto& layer : blk.qkv) layer.adapter(slot).enabled = enabled;
}

bool VitModel::slot_enabled(AdapterSlot slot) const {
  return !blocks_.empty() && blocks_.front().qkv[0].adapter(slot).enabled;
}

void VitModel::clear_grads() {
  for (auto& [n, t] : named_tensors()) t.clear_grad();
}

std::vector<std::pair<Tensor, Tensor>> VitModel::adapter_a_pairs() const {
  std::vector<std::pair<Tensor, Tensor>> out;
  for (const auto& blk : blocks_)
    for (const auto& layer : blk.qkv)
      out.emplace_back(layer.adapter(AdapterSlot::global).A,
                       layer.adapter(AdapterSlot::personal).A);
  return out;
}

ParamPartition param_partition(const VitModel& model) {
  ParamPartition p;
  for (const auto& [name, t] : model.named_tensors()) {
    if (name.find(".global.") != std::string::npos) {
      p.adapters_global.push_back(name);
    } else if (name.find(".personal.") != std::string::npos) {
      p.adapters_personal.push_back(name);
    } else if (name.rfind("head.", 0) == 0) {
      p.head.push_back(name);
    } else {
      p.base_frozen.push_back(name);
    }
  }
  return p;
}

AdapterBundle export_adapters(const VitModel& model, const std::string& method) {
  AdapterBundle bundle;
  bundle.method = method;
  bundle.config_hash = model.config().config_hash();
  for (std::size_t b = 0; b < model.config().num_blocks; ++b) {
    for (auto proj : kProjections) {
      for (auto slot : {AdapterSlot::global, AdapterSlot::personal}) {
        const auto& a = model.projection(b, proj).adapter(slot);
        LoRAAdapter copy = a;
        copy.A = a.A.detach();
        copy.B = a.B.detach();
        bundle.adapters.emplace(
            AdapterKey{static_cast<std::uint32_t>(b), proj, slot},
            std::move(copy));
      }
    }
  }
  return bundle;
}

void import_adapters(VitModel& model, const AdapterBundle& bundle) {
  if (bundle.config_hash != model.config().config_hash()) {
    throw IncompatibleError("adapter bundle was written for another model "
                            "configuration");
  }
  for (const auto& [key, a] : bundle.adapters) {
    if (key.block >= model.config().num_blocks) {
      throw IncompatibleError("adapter bundle references block " +
                              std::to_string(key.block));
    }
    const std::string pre = "blocks." + std::to_string(key.block) + "." +
                            projection_name(key.projection) + "." +
                            slot_name(key.slot) + ".";
    model.assign(pre + "A", a.A);
    model.assign(pre + "B", a.B);
    model.projection(key.block, key.projection).adapter(key.slot).enabled =
        a.enabled;
  }
}

void save_base_checkpoint(const VitModel& model,
                          const std::filesystem::path& path) {
  AdapterBundle bundle;
  bundle.method = "full-model";
  bundle.config_hash = model.config().backbone_hash();
  for (const auto& name : param_partition(model).base_frozen) {
    bundle.tensors.emplace(name, model.tensor(name).detach());
  }
  save_bundle(bundle, path);
}

void load_base_checkpoint(VitModel& model, const std::filesystem::path& path) {
  const AdapterBundle bundle =
      load_bundle(path, model.config().backbone_hash());
  for (const auto& name : param_partition(model).base_frozen) {
    const auto it = bundle.tensors.find(name);
    if (it == bundle.tensors.end()) {
      throw IncompatibleError(path.string() + " lacks base tensor " + name);
    }
    model.assign(name, it->second);
  }
}

}  // namespace fedopal
