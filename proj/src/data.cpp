#include "fedopal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include "fedopal/binio.hpp"
#include "fedopal/error.hpp"

namespace fedopal {
namespace {

constexpr char kDatasetMagic[8] = {'F', 'O', 'P', 'A', 'L', 'D', 'S', 'T'};

// Stain-like tint shared by every class; class identity is in the geometry.
constexpr std::array<double, 3> kTint = {0.92, 0.62, 0.80};

constexpr std::size_t kLabelPoolPerClass = 400;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Largest-remainder apportionment of `total` by `weights`, ties to the
// lower index.
std::vector<std::size_t> apportion(std::size_t total,
                                   const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / wsum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    given += out[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (std::size_t j = 0; given < total; ++j, ++given) {
    ++out[rema[j % rema.size()].second];
  }
  return out;
}

std::size_t round_half_up(double v) {
  return static_cast<std::size_t>(std::floor(v + 0.5));
}

}  // namespace

void SyntheticDatasetConfig::validate() const {
  if (num_clients == 0) throw ConfigError("num_clients must be positive");
  if (num_classes == 0 || num_classes > 255) {
    throw ConfigError("num_classes must lie in [1, 255]");
  }
  if (image_size == 0) throw ConfigError("image_size must be positive");
  if (channels == 0) throw ConfigError("channels must be positive");
  if (samples_per_client.size() != num_clients) {
    throw ConfigError("samples_per_client lists " +
                      std::to_string(samples_per_client.size()) +
                      " entries for " + std::to_string(num_clients) +
                      " clients");
  }
  for (auto n : samples_per_client) {
    if (n < num_classes) {
      throw ConfigError("samples_per_client entries must be at least "
                        "num_classes for stratified splitting");
    }
  }
  if (!(dirichlet_beta > 0.0)) throw ConfigError("dirichlet_beta must be > 0");
  if (!(feature_shift >= 0.0)) throw ConfigError("feature_shift must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in [0, 1)");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in [0, 1)");
  }
}

std::vector<Histogram> FederatedDataset::compute_histograms() const {
  std::vector<Histogram> out;
  for (const auto& c : clients) {
    Histogram h(config.num_classes, 0);
    for (const auto* split : {&c.train, &c.val, &c.test})
      for (const auto& s : *split) ++h.at(s.label);
    out.push_back(std::move(h));
  }
  return out;
}

FederatedDataset FederatedDataset::pooled() const {
  FederatedDataset p;
  p.config = config;
  p.config.num_clients = 1;
  std::size_t total = 0;
  for (auto n : config.samples_per_client) total += n;
  p.config.samples_per_client = {total};
  p.clients.resize(1);
  for (const auto& c : clients) {
    auto& dst = p.clients[0];
    dst.train.insert(dst.train.end(), c.train.begin(), c.train.end());
    dst.val.insert(dst.val.end(), c.val.begin(), c.val.end());
    dst.test.insert(dst.test.end(), c.test.begin(), c.test.end());
  }
  p.histograms = p.compute_histograms();
  return p;
}

PatternGenerator::PatternGenerator(std::size_t num_classes,
                                   std::size_t image_size,
                                   std::size_t channels,
                                   std::uint64_t pattern_seed)
    : image_size_(image_size), channels_(channels) {
  Rng rng(mix_seed(pattern_seed, 0xc1a55));
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassPattern p{};
    p.angle = std::numbers::pi * (static_cast<double>(c) + rng.uniform(0.0, 0.6)) /
              static_cast<double>(num_classes);
    p.frequency = rng.uniform(1.5, 4.5);
    p.blob_x = rng.uniform(0.2, 0.8);
    p.blob_y = rng.uniform(0.2, 0.8);
    p.blob_radius = rng.uniform(0.08, 0.16);
    patterns_.push_back(p);
  }
}

Tensor PatternGenerator::generate(std::size_t cls, double noise_sigma,
                                  Rng& rng) const {
  if (cls >= patterns_.size()) {
    throw IndexError("class " + std::to_string(cls) + " outside [0, " +
                     std::to_string(patterns_.size()) + ")");
  }
  const ClassPattern& p = patterns_[cls];
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double angle = p.angle + rng.normal(0.0, 0.08);
  const double bx = p.blob_x + rng.normal(0.0, 0.04);
  const double by = p.blob_y + rng.normal(0.0, 0.04);
  const double contrast = rng.uniform(0.6, 1.0);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  const std::size_t S = image_size_;
  std::vector<double> gray(S * S);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
      const double stripe =
          std::sin(2.0 * std::numbers::pi * p.frequency * (u * ca + v * sa) +
                   phase);
      const double r2 = (u - bx) * (u - bx) + (v - by) * (v - by);
      const double blob = std::exp(-r2 / (2.0 * p.blob_radius * p.blob_radius));
      gray[y * S + x] = 0.45 + 0.22 * contrast * stripe + 0.4 * blob;
    }
  }
  std::vector<double> img(channels_ * S * S);
  for (std::size_t c = 0; c < channels_; ++c) {
    const double tint = kTint[c % kTint.size()];
    for (std::size_t i = 0; i < S * S; ++i) {
      const double noise = noise_sigma > 0.0 ? rng.normal(0.0, noise_sigma) : 0.0;
      img[c * S * S + i] = clamp01(tint * gray[i] + noise);
    }
  }
  return Tensor::from({channels_, S, S}, std::move(img));
}

Tensor apply_feature_shift(const Tensor& image, std::size_t client,
                           double strength, std::uint64_t seed) {
  if (!(strength >= 0.0)) throw ConfigError("feature shift strength must be >= 0");
  if (strength == 0.0) return image.detach();
  const std::size_t C = image.shape().at(0);
  const std::size_t plane = image.size() / C;
  Rng rng(mix_seed(seed, client, 0xfea7));
  std::vector<double> out(image.data().begin(), image.data().end());
  for (std::size_t c = 0; c < C; ++c) {
    const double gain = 1.0 + strength * rng.uniform(-1.0, 1.0);
    const double offset = 0.5 * strength * rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < plane; ++i) {
      auto& v = out[c * plane + i];
      v = clamp01(gain * v + offset);
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

std::vector<std::vector<std::size_t>> dirichlet_partition(
    std::span<const std::size_t> labels, std::size_t num_clients, double beta,
    Rng& rng) {
  if (!(beta > 0.0)) throw ConfigError("dirichlet beta must be > 0");
  if (num_clients == 0) throw ConfigError("num_clients must be positive");
  std::vector<std::vector<std::size_t>> parts(num_clients);
  if (labels.empty()) return parts;
  const std::size_t classes =
      *std::max_element(labels.begin(), labels.end()) + 1;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    if (idx.empty()) continue;
    rng.shuffle(std::span<std::size_t>(idx));
    const auto props = rng.dirichlet(num_clients, beta);
    const auto counts = apportion(idx.size(), props);
    std::size_t at = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      parts[k].insert(parts[k].end(), idx.begin() + at,
                      idx.begin() + at + counts[k]);
      at += counts[k];
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

Tensor hflip(const Tensor& image) {
  const auto& s = image.shape();
  if (s.size() != 3) throw ShapeError("hflip expects [C×H×W], got " + shape_str(s));
  const std::size_t H = s[1];
  const std::size_t W = s[2];
  std::vector<double> out(image.size());
  const auto in = image.data();
  for (std::size_t c = 0; c < s[0]; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        out[(c * H + y) * W + x] = in[(c * H + y) * W + (W - 1 - x)];
  return Tensor::from(s, std::move(out));
}

Tensor augment(const Tensor& image, Rng& rng) {
  return rng.uniform() < 0.5 ? hflip(image) : image;
}

FederatedDataset generate_dataset(const SyntheticDatasetConfig& config) {
  config.validate();
  const std::size_t C = config.num_classes;
  const PatternGenerator gen(C, config.image_size, config.channels,
                             config.pattern_seed);

  // Label shift: client class proportions from a Dirichlet partition of a
  // balanced reference pool, then apportioned to each client's size.
  std::vector<std::size_t> pool;
  for (std::size_t c = 0; c < C; ++c) pool.insert(pool.end(), kLabelPoolPerClass, c);
  Rng part_rng(mix_seed(config.seed, 0xd1c7));
  const auto parts =
      dirichlet_partition(pool, config.num_clients, config.dirichlet_beta,
                          part_rng);

  FederatedDataset ds;
  ds.config = config;
  ds.clients.resize(config.num_clients);
  for (std::size_t k = 0; k < config.num_clients; ++k) {
    std::vector<double> props(C, 0.0);
    for (auto i : parts[k]) props[pool[i]] += 1.0;
    if (parts[k].empty()) props[part_rng.index(C)] = 1.0;
    const auto counts = apportion(config.samples_per_client[k], props);

    Rng rng(mix_seed(config.seed, k, 0x5a3e));
    auto& splits = ds.clients[k];
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<Sample> cls;
      for (std::size_t i = 0; i < counts[c]; ++i) {
        Tensor img = gen.generate(c, config.noise_sigma, rng);
        img = apply_feature_shift(img, k, config.feature_shift, config.seed);
        cls.push_back({std::move(img), c, k});
      }
      // Stratified: test carved from the whole, then train:val on the rest.
      const std::size_t n_test =
          round_half_up(config.test_fraction * static_cast<double>(cls.size()));
      const std::size_t rest = cls.size() - n_test;
      const std::size_t n_val =
          round_half_up(config.val_fraction * static_cast<double>(rest));
      for (std::size_t i = 0; i < cls.size(); ++i) {
        auto& dst = i < n_test ? splits.test
                    : i < n_test + n_val ? splits.val
                                         : splits.train;
        dst.push_back(cls[i]);
      }
    }
    for (auto* split : {&splits.train, &splits.val, &splits.test}) {
      rng.shuffle(std::span<Sample>(*split));
    }
  }
  ds.histograms = ds.compute_histograms();
  return ds;
}

std::vector<Sample> generate_pool(const SyntheticDatasetConfig& config,
                                  std::size_t per_class) {
  const PatternGenerator gen(config.num_classes, config.image_size,
                             config.channels, config.pattern_seed);
  Rng rng(mix_seed(config.seed, 0x9001));
  std::vector<Sample> out;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < config.num_classes; ++c)
      out.push_back({gen.generate(c, config.noise_sigma, rng), c, 0});
  rng.shuffle(std::span<Sample>(out));
  return out;
}

// Layout: magic, u32 version, config block, then per client: histogram
// (u32 per class) and the train/val/test splits as u32 count followed by
// (u8 label, f64 pixels) records. Little-endian throughout.
void save_dataset(const FederatedDataset& ds, const std::filesystem::path& path) {
  const auto& c = ds.config;
  binio::Writer w(path);
  w.bytes(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(c.num_clients));
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u32(static_cast<std::uint32_t>(c.image_size));
  w.u32(static_cast<std::uint32_t>(c.channels));
  w.u32(static_cast<std::uint32_t>(c.samples_per_client.size()));
  for (auto n : c.samples_per_client) w.u32(static_cast<std::uint32_t>(n));
  w.f64(c.dirichlet_beta);
  w.f64(c.feature_shift);
  w.f64(c.noise_sigma);
  w.u64(c.seed);
  w.u64(c.pattern_seed);
  w.f64(c.test_fraction);
  w.f64(c.val_fraction);
  for (std::size_t k = 0; k < ds.clients.size(); ++k) {
    for (auto n : ds.histograms.at(k)) w.u32(static_cast<std::uint32_t>(n));
    const auto& cl = ds.clients[k];
    for (const auto* split : {&cl.train, &cl.val, &cl.test}) {
      w.u32(static_cast<std::uint32_t>(split->size()));
      for (const auto& s : *split) {
        w.u8(static_cast<std::uint8_t>(s.label));
        for (double v : s.image.data()) w.f64(v);
      }
    }
  }
  w.finish();
}

FederatedDataset load_dataset(const std::filesystem::path& path) {
  binio::Reader r(path);
  char magic[sizeof kDatasetMagic];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kDatasetMagic, sizeof magic) != 0) {
    throw FormatError(path.string() + " is not a dataset file");
  }
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError(path.string() + ": unsupported dataset version " +
                      std::to_string(version));
  }
  FederatedDataset ds;
  auto& c = ds.config;
  c.num_clients = r.u32();
  c.num_classes = r.u32();
  c.image_size = r.u32();
  c.channels = r.u32();
  const auto n_sizes = r.u32();
  if (n_sizes != c.num_clients || c.num_clients > 4096 || c.image_size > 4096 ||
      c.channels > 16) {
    throw FormatError(path.string() + ": implausible dataset header");
  }
  c.samples_per_client.resize(n_sizes);
  for (auto& n : c.samples_per_client) n = r.u32();
  c.dirichlet_beta = r.f64();
  c.feature_shift = r.f64();
  c.noise_sigma = r.f64();
  c.seed = r.u64();
  c.pattern_seed = r.u64();
  c.test_fraction = r.f64();
  c.val_fraction = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": invalid stored config: " + e.what());
  }
  const Shape image_shape{c.channels, c.image_size, c.image_size};
  const std::size_t pixels = numel(image_shape);
  ds.clients.resize(c.num_clients);
  std::vector<Histogram> stored;
  for (std::size_t k = 0; k < c.num_clients; ++k) {
    Histogram h(c.num_classes);
    for (auto& n : h) n = r.u32();
    stored.push_back(std::move(h));
    auto& cl = ds.clients[k];
    for (auto* split : {&cl.train, &cl.val, &cl.test}) {
      const auto count = r.u32();
      if (count > c.samples_per_client[k]) {
        throw FormatError(path.string() + ": split larger than its client");
      }
      split->reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.label = r.u8();
        if (s.label >= c.num_classes) {
          throw FormatError(path.string() + ": label out of range");
        }
        s.client = k;
        std::vector<double> px(pixels);
        for (auto& v : px) v = r.f64();
        s.image = Tensor::from(image_shape, std::move(px));
        split->push_back(std::move(s));
      }
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  ds.histograms = ds.compute_histograms();
  if (ds.histograms != stored) {
    throw FormatError(path.string() + ": stored histograms disagree with data");
  }
  return ds;
}

Batch make_batch(std::span<const Sample> samples,
                 std::span<const std::size_t> indices, Rng* augment_rng) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const Shape img_shape = samples[indices[0]].image.shape();
  const std::size_t len = numel(img_shape);
  std::vector<double> data;
  data.reserve(indices.size() * len);
  Batch b;
  for (auto i : indices) {
    const Sample& s = samples[i];
    const Tensor img = augment_rng ? augment(s.image, *augment_rng) : s.image;
    data.insert(data.end(), img.data().begin(), img.data().end());
    b.labels.push_back(s.label);
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), img_shape.begin(), img_shape.end());
  b.images = Tensor::from(std::move(shape), std::move(data));
  return b;
}

}  // namespace fedopal
