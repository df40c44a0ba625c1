#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fedopal/artifacts.hpp"
#include "fedopal/error.hpp"
#include "fedopal/metrics.hpp"
#include "support.hpp"

using namespace fedopal;

namespace {

const std::filesystem::path kData = FEDOPAL_TEST_DATA;

// Reference average-rank columns, in fixture row order.
const std::vector<double> kTable1Ranks = {5.00, 6.17, 3.67, 5.50, 4.33, 3.50, 3.83, 3.17};
const std::vector<double> kTable2Ranks = {6.00, 4.20, 4.20, 5.20, 2.40, 5.00, 5.00, 3.60};

// Plain O(M²) competition rank: 1 + number of strictly better entries.
std::vector<double> oracle_avg_rank(const std::vector<std::vector<double>>& t) {
  std::vector<double> out(t.size(), 0.0);
  for (std::size_t k = 0; k < t[0].size(); ++k)
    for (std::size_t m = 0; m < t.size(); ++m) {
      std::size_t better = 0;
      for (std::size_t o = 0; o < t.size(); ++o)
        if (t[o][k] > t[m][k]) ++better;
      out[m] += static_cast<double>(1 + better) / static_cast<double>(t[0].size());
    }
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("balanced accuracy examples") {
  const std::vector<std::size_t> targets = {0, 0, 0, 1, 1, 2};
  const std::vector<std::size_t> preds = {0, 0, 1, 1, 1, 2};
  // recalls 2/3, 1, 1
  CHECK(balanced_accuracy(preds, targets, 3) == doctest::Approx((2.0 / 3.0 + 2.0) / 3.0));
  const std::vector<std::size_t> t2 = {0, 0, 1, 1};
  const std::vector<std::size_t> all0 = {0, 0, 0, 0};
  CHECK(balanced_accuracy(all0, t2, 2) == 0.5);
  CHECK(balanced_accuracy(t2, t2, 2) == 1.0);
  // an absent class does not count as zero recall
  CHECK(balanced_accuracy(t2, t2, 5) == 1.0);
  CHECK_THROWS_AS(balanced_accuracy(all0, targets, 3), ContractError);
  CHECK_THROWS_AS(balanced_accuracy({}, {}, 3), ContractError);
  const std::vector<std::size_t> bad = {0, 7, 0, 0};
  CHECK_THROWS_AS(balanced_accuracy(bad, t2, 2), IndexError);
}

TEST_CASE("balanced accuracy invariants") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> t, p;
    for (int i = 0; i < 40; ++i) {
      t.push_back(rng.index(4));
      p.push_back(rng.index(4));
    }
    std::vector<std::size_t> t3, p3;
    for (int k = 0; k < 3; ++k) {
      t3.insert(t3.end(), t.begin(), t.end());
      p3.insert(p3.end(), p.begin(), p.end());
    }
    CHECK(balanced_accuracy(p3, t3, 4) == balanced_accuracy(p, t, 4));

    std::vector<std::size_t> tb, pb;
    for (std::size_t c = 0; c < 4; ++c)
      for (int i = 0; i < 10; ++i) {
        tb.push_back(c);
        pb.push_back(rng.index(4));
      }
    double correct = 0.0;
    for (std::size_t i = 0; i < tb.size(); ++i) correct += tb[i] == pb[i];
    CHECK(std::abs(balanced_accuracy(pb, tb, 4) - correct / 40.0) < 1e-12);
  }
}

TEST_CASE("competition ranks share the minimum rank") {
  const std::vector<double> v = {0.5, 0.9, 0.5, 0.1};
  CHECK(competition_ranks(v) == std::vector<std::size_t>{2, 1, 2, 4});
  const std::vector<double> close = {0.7531, 0.7529};
  CHECK(competition_ranks(close) == std::vector<std::size_t>{1, 2});
  CHECK(competition_ranks(close, 3) == std::vector<std::size_t>{1, 1});
}

TEST_CASE("average rank reproduces both reference rank columns") {
  for (const auto& [file, expected] :
       {std::pair{"table1_means.txt", kTable1Ranks}, std::pair{"table2_means.txt", kTable2Ranks}}) {
    const auto t = read_accuracy_table(kData / file);
    REQUIRE(t.values.size() == expected.size());
    const auto got = average_rank(t.values, 3);
    const auto oracle = oracle_avg_rank(t.values);
    for (std::size_t m = 0; m < expected.size(); ++m) {
      CHECK_MESSAGE(std::abs(got[m] - expected[m]) <= 0.005, t.methods[m]);
      CHECK(std::abs(got[m] - oracle[m]) < 1e-12);
    }
  }
}

TEST_CASE("a total tie ranks everyone first") {
  const std::vector<std::vector<double>> t(5, std::vector<double>(4, 0.75));
  for (double r : average_rank(t)) CHECK(r == 1.0);
}

TEST_CASE("average rank is invariant under monotone transforms") {
  Rng rng(9);
  std::vector<std::vector<double>> t(6, std::vector<double>(5));
  for (auto& row : t)
    for (auto& v : row) v = std::round(rng.uniform() * 20.0) / 20.0;  // force ties
  auto warped = t;
  for (auto& row : warped)
    for (auto& v : row) v = std::exp(3.0 * v) - 7.0;
  CHECK(average_rank(t) == average_rank(warped));
  const auto oracle = oracle_avg_rank(t);
  const auto got = average_rank(t);
  for (std::size_t m = 0; m < t.size(); ++m) CHECK(std::abs(got[m] - oracle[m]) < 1e-12);
}

TEST_CASE("incomplete tables are rejected") {
  std::vector<std::vector<double>> t = {{0.1, 0.2}, {0.3}};
  CHECK_THROWS_AS(average_rank(t), ContractError);
  t = {{0.1, NAN}, {0.3, 0.4}};
  CHECK_THROWS_AS(average_rank(t), ContractError);
  CHECK_THROWS_AS(build_metrics_table({{"A", 0, 0, 0.5}, {"A", 0, 1, 0.5}, {"B", 0, 0, 0.4}}),
                  ContractError);
}

TEST_CASE("metrics table statistics") {
  std::vector<AccuracyRecord> recs;
  // A: client0 seeds 0.6/0.8, client1 0.4/0.4. B: 0.5/0.5 and 0.9/0.7.
  recs.push_back({"A", 0, 0, 0.6});
  recs.push_back({"A", 0, 1, 0.4});
  recs.push_back({"A", 1, 0, 0.8});
  recs.push_back({"A", 1, 1, 0.4});
  recs.push_back({"B", 0, 0, 0.5});
  recs.push_back({"B", 0, 1, 0.9});
  recs.push_back({"B", 1, 0, 0.5});
  recs.push_back({"B", 1, 1, 0.7});
  recs.push_back({"Centralized", 0, 0, 1.0});
  recs.push_back({"Centralized", 0, 1, 1.0});
  const auto table = build_metrics_table(recs, {"Centralized"});
  CHECK(table.num_clients == 2);
  const auto& a = table.row("A");
  CHECK(a.mean[0] == doctest::Approx(0.7));
  CHECK(a.std[0] == doctest::Approx(std::sqrt(0.02)));
  CHECK(a.std[1] == doctest::Approx(0.0));
  CHECK(a.avg_mean == doctest::Approx(0.55));
  // per-seed client averages 0.5 and 0.6
  CHECK(a.avg_std == doctest::Approx(std::sqrt(0.005)));
  CHECK(*a.avg_rank == doctest::Approx(1.5));
  CHECK(*table.row("B").avg_rank == doctest::Approx(1.5));
  CHECK_FALSE(table.row("Centralized").ranked);
  CHECK(table.row("Centralized").std[0] == 0.0);
  CHECK_THROWS_AS(table.row("C"), ContractError);
}

TEST_CASE("results export round trip") {
  const auto dir = testing::scratch_dir("metrics_export");
  std::vector<AccuracyRecord> recs;
  Rng rng(1);
  for (std::string m : {"Local", "FedIT", "FedOPAL-R"})
    for (std::uint64_t s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < 4; ++k) recs.push_back({m, s, k, rng.uniform()});
  const auto table = build_metrics_table(recs);
  export_results(table, dir / "results.tsv");
  const auto back = parse_results(dir / "results.tsv");
  REQUIRE(back.rows.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(back.rows[m].method == table.rows[m].method);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(back.rows[m].mean[k] - table.rows[m].mean[k]) <= 5e-4 + 1e-12);  // 3 decimals
      CHECK(back.rows[m].client_rank[k] == table.rows[m].client_rank[k]);
    }
    CHECK(std::abs(*back.rows[m].avg_rank - *table.rows[m].avg_rank) <= 5e-3 + 1e-12);  // 2 decimals
  }
  // summary recomputed from the per-client rows
  std::vector<std::vector<double>> means;
  for (const auto& r : table.rows) means.push_back(r.mean);
  const auto ranks = average_rank(means);
  for (std::size_t m = 0; m < 3; ++m) CHECK(*table.rows[m].avg_rank == doctest::Approx(ranks[m]));

  std::ofstream(dir / "bad.tsv") << "nonsense\n";
  CHECK_THROWS_AS(parse_results(dir / "bad.tsv"), FormatError);
}

TEST_CASE("accuracy log round trip") {
  const auto dir = testing::scratch_dir("metrics_log");
  ExperimentResult r;
  r.records = {{"FedIT", 0, 0, 0.25}, {"FedIT", 0, 1, 1.0 / 3.0}};
  MethodRunSummary s;
  s.method = "FedIT";
  s.client_accuracy = {0.25, 1.0 / 3.0};
  r.runs = {s};
  write_accuracy_log(r, dir / "acc.jsonl");
  const auto back = read_accuracy_log(dir / "acc.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].balanced_accuracy == 1.0 / 3.0);
  CHECK(back[1].client == 1);
  std::ofstream(dir / "broken.jsonl") << "{\"method\": \"X\"}\n";
  CHECK_THROWS_WITH_AS(read_accuracy_log(dir / "broken.jsonl"), doctest::Contains("1"), FormatError);
}

TEST_CASE("accuracy table reader") {
  const auto dir = testing::scratch_dir("metrics_table");
  std::ofstream(dir / "ragged.txt") << "A 0.1 0.2\nB 0.3\n";
  CHECK_THROWS_AS(read_accuracy_table(dir / "ragged.txt"), FormatError);
  std::ofstream(dir / "nan.txt") << "A 0.1 x\n";
  CHECK_THROWS_AS(read_accuracy_table(dir / "nan.txt"), FormatError);
}

TEST_CASE("class distribution chart") {
  const std::vector<std::vector<std::size_t>> h = {{5, 0, 3}, {1, 2, 0}};
  const std::string svg = render_class_distribution(h);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t rects = 0;
  for (std::size_t at = svg.find("class=\"bar\""); at != std::string::npos;
       at = svg.find("class=\"bar\"", at + 1))
    ++rects;
  CHECK(rects == 6);
  CHECK(svg.find("height=\"0") != std::string::npos);  // zero-count bars are drawn flat
  CHECK(svg == render_class_distribution(h));
  const auto dir = testing::scratch_dir("metrics_svg");
  plot_class_distribution(h, dir / "c.svg");
  std::stringstream ss;
  ss << std::ifstream(dir / "c.svg").rdbuf();
  CHECK(ss.str() == svg);
}

}
