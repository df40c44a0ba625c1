#include <doctest.h>

#include <fstream>
#include <numeric>

#include "fedopal/data.hpp"
#include "fedopal/error.hpp"
#include "support.hpp"

using namespace fedopal;

namespace {

SyntheticDatasetConfig small_data(std::uint64_t seed = 7) {
  SyntheticDatasetConfig c;
  c.num_clients = 4;
  c.num_classes = 5;
  c.image_size = 8;
  c.samples_per_client = {60, 50, 40, 30};
  c.seed = seed;
  return c;
}

double l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Total-variation distance of one client's label distribution from uniform.
double tv_from_uniform(const Histogram& h) {
  const double n = static_cast<double>(std::accumulate(h.begin(), h.end(), std::size_t{0}));
  double tv = 0.0;
  for (auto c : h) tv += std::abs(static_cast<double>(c) / n - 1.0 / static_cast<double>(h.size()));
  return 0.5 * tv;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("pattern generator is deterministic and separates classes") {
  const PatternGenerator gen(5, 16, 3, 1);
  Rng r1(3), r2(3);
  CHECK(testing::bit_equal(gen.generate(2, 0.1, r1).data(), gen.generate(2, 0.1, r2).data()));
  Rng r(0);
  std::vector<Tensor> clean;
  for (std::size_t c = 0; c < 5; ++c) clean.push_back(gen.generate(c, 0.0, r));
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) CHECK(l2(clean[a].data(), clean[b].data()) > 0.1);
  Rng noisy(1);
  const Tensor noisy_img = gen.generate(4, 0.5, noisy);
  for (double v : noisy_img.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(gen.generate(5, 0.0, r), IndexError);
}

TEST_CASE("feature shift") {
  const Tensor img = testing::random_tensor({3, 8, 8}, 4, 0.0, 1.0);
  CHECK(testing::bit_equal(apply_feature_shift(img, 2, 0.0, 9).data(), img.data()));
  const Tensor a = apply_feature_shift(img, 1, 0.3, 9);
  CHECK(testing::bit_equal(a.data(), apply_feature_shift(img, 1, 0.3, 9).data()));
  const Tensor b = apply_feature_shift(img, 2, 0.3, 9);
  const double rms = l2(a.data(), b.data()) / std::sqrt(static_cast<double>(img.size()));
  CHECK(rms > 0.02);
  for (double v : a.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK_THROWS_AS(apply_feature_shift(img, 0, -0.1, 9), ConfigError);
}

TEST_CASE("dirichlet partition is an exact partition") {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 10; ++c) labels.insert(labels.end(), 37, c);
  for (double beta : {0.05, 0.5, 5.0}) {
    Rng rng(11);
    const auto parts = dirichlet_partition(labels, 7, beta, rng);
    std::vector<int> seen(labels.size(), 0);
    for (const auto& p : parts)
      for (auto i : p) ++seen.at(i);
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  }
  Rng rng(1);
  const auto one = dirichlet_partition(labels, 1, 0.3, rng);
  CHECK(one.at(0).size() == labels.size());
  CHECK_THROWS_AS(dirichlet_partition(labels, 0, 0.3, rng), ConfigError);
  CHECK_THROWS_AS(dirichlet_partition(labels, 3, 0.0, rng), ConfigError);
}

TEST_CASE("large beta approaches an even split") {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 4; ++c) labels.insert(labels.end(), 1000, c);
  Rng rng(5);
  const auto parts = dirichlet_partition(labels, 4, 1000.0, rng);
  for (const auto& p : parts) {
    std::vector<std::size_t> h(4, 0);
    for (auto i : p) ++h[labels[i]];
    for (auto n : h) CHECK(std::abs(static_cast<double>(n) - 250.0) <= 25.0);
  }
}

TEST_CASE("label skew grows as beta shrinks") {
  std::vector<double> mean_tv;
  for (double beta : {0.1, 1.0, 100.0}) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto c = small_data(seed);
      c.dirichlet_beta = beta;
      c.samples_per_client = {100, 100, 100, 100};
      c.image_size = 4;
      for (const auto& h : generate_dataset(c).histograms) {
        total += tv_from_uniform(h);
        ++n;
      }
    }
    mean_tv.push_back(total / static_cast<double>(n));
  }
  CHECK(mean_tv[0] > mean_tv[1]);
  CHECK(mean_tv[1] > mean_tv[2]);
}

TEST_CASE("dataset generation is deterministic with the requested sizes") {
  const auto cfg = small_data();
  const auto a = generate_dataset(cfg), b = generate_dataset(cfg);
  REQUIRE(a.clients.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& ca = a.clients[k];
    CHECK(ca.train.size() + ca.val.size() + ca.test.size() == cfg.samples_per_client[k]);
    REQUIRE(ca.train.size() == b.clients[k].train.size());
    for (std::size_t i = 0; i < ca.train.size(); ++i) {
      CHECK(ca.train[i].label == b.clients[k].train[i].label);
      CHECK(testing::bit_equal(ca.train[i].image.data(), b.clients[k].train[i].image.data()));
      CHECK(ca.train[i].client == k);
    }
  }
  CHECK(a.histograms == a.compute_histograms());
  auto other = cfg;
  other.seed = 8;
  CHECK_FALSE(testing::bit_equal(generate_dataset(other).clients[0].train[0].image.data(),
                                 a.clients[0].train[0].image.data()));
}

TEST_CASE("splits are disjoint and stratified") {
  const auto ds = generate_dataset(small_data());
  for (const auto& cl : ds.clients) {
    std::vector<const Sample*> all;
    for (const auto* split : {&cl.train, &cl.val, &cl.test})
      for (const auto& s : *split) all.push_back(&s);
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j)
        CHECK_FALSE(testing::bit_equal(all[i]->image.data(), all[j]->image.data()));

    for (std::size_t c = 0; c < ds.config.num_classes; ++c) {
      auto count = [c](const std::vector<Sample>& v) {
        return static_cast<double>(std::count_if(v.begin(), v.end(),
                                                 [c](const Sample& s) { return s.label == c; }));
      };
      const double n = count(cl.train) + count(cl.val) + count(cl.test);
      CHECK(std::abs(count(cl.test) - 0.2 * n) <= 1.0);
      const double rest = n - count(cl.test);
      CHECK(std::abs(count(cl.train) - 0.8 * rest) <= 1.0);
    }
  }
}

TEST_CASE("pooled dataset concatenates every client") {
  const auto ds = generate_dataset(small_data());
  const auto pooled = ds.pooled();
  REQUIRE(pooled.clients.size() == 1);
  std::size_t train = 0;
  for (const auto& c : ds.clients) train += c.train.size();
  CHECK(pooled.clients[0].train.size() == train);
}

TEST_CASE("config validation") {
  auto c = small_data();
  c.samples_per_client = {60, 50};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_data();
  c.dirichlet_beta = 0.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("dirichlet_beta"), ConfigError);
  c = small_data();
  c.samples_per_client = {60, 50, 40, 3};
  CHECK_THROWS_AS(generate_dataset(c), ConfigError);
}

TEST_CASE("dataset save/load round trip and truncation") {
  const auto dir = testing::scratch_dir("data_io");
  const auto ds = generate_dataset(small_data());
  save_dataset(ds, dir / "ds.bin");
  const auto back = load_dataset(dir / "ds.bin");
  CHECK(back.histograms == ds.histograms);
  CHECK(back.config.seed == ds.config.seed);
  for (std::size_t k = 0; k < ds.clients.size(); ++k) {
    REQUIRE(back.clients[k].test.size() == ds.clients[k].test.size());
    for (std::size_t i = 0; i < ds.clients[k].test.size(); ++i) {
      CHECK(back.clients[k].test[i].label == ds.clients[k].test[i].label);
      CHECK(testing::bit_equal(back.clients[k].test[i].image.data(),
                               ds.clients[k].test[i].image.data()));
    }
  }
  const auto size = std::filesystem::file_size(dir / "ds.bin");
  std::filesystem::copy_file(dir / "ds.bin", dir / "cut.bin");
  std::filesystem::resize_file(dir / "cut.bin", size / 2);
  CHECK_THROWS_AS(load_dataset(dir / "cut.bin"), FormatError);
  std::ofstream(dir / "junk.bin") << "not a dataset";
  CHECK_THROWS_AS(load_dataset(dir / "junk.bin"), FormatError);
  CHECK_THROWS(load_dataset(dir / "missing.bin"));
}

TEST_CASE("horizontal flip is an involution and mirrors columns") {
  const Tensor img = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor f = hflip(img);
  CHECK(std::vector<double>(f.data().begin(), f.data().end()) ==
        std::vector<double>{3, 2, 1, 6, 5, 4});
  const Tensor x = testing::random_tensor({3, 5, 5}, 8);
  CHECK(testing::bit_equal(hflip(hflip(x)).data(), x.data()));
  Rng rng(2);
  std::size_t flipped = 0;
  for (int i = 0; i < 400; ++i)
    if (!testing::bit_equal(augment(x, rng).data(), x.data())) ++flipped;
  CHECK(flipped > 150);
  CHECK(flipped < 250);
  CHECK_THROWS_AS(hflip(Tensor::zeros({4, 4})), ShapeError);
}

TEST_CASE("make_batch stacks samples in index order") {
  const auto ds = generate_dataset(small_data());
  const auto& train = ds.clients[0].train;
  const std::vector<std::size_t> idx = {2, 0};
  const Batch b = make_batch(train, idx, nullptr);
  const auto& c = ds.config;
  CHECK(b.images.shape() == Shape{2, c.channels, c.image_size, c.image_size});
  CHECK(b.labels == std::vector<std::size_t>{train[2].label, train[0].label});
  const std::size_t per = train[0].image.size();
  CHECK(testing::bit_equal(b.images.data().subspan(0, per), train[2].image.data()));
}

}
