// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance <work-dir>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedopal/artifacts.hpp"
#include "fedopal/federation.hpp"
#include "fedopal/gradcheck.hpp"
#include "support.hpp"

using namespace fedopal;
namespace fs = std::filesystem;

namespace {

const fs::path kData = FEDOPAL_TEST_DATA;
const fs::path kConfigs = FEDOPAL_CONFIG_DIR;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::stringstream ss;
  ss << std::ifstream(p, std::ios::binary).rdbuf();
  return ss.str();
}

double max_diff(const Tensor& a, const Tensor& b) {
  return testing::max_abs_diff(a.data(), b.data());
}

// ---------------------------------------------------------------- 1

Verdict rank_fixture() {
  Verdict v;
  const std::vector<std::pair<const char*, std::vector<double>>> cases = {
      {"table1_means.txt", {5.00, 6.17, 3.67, 5.50, 4.33, 3.50, 3.83, 3.17}},
      {"table2_means.txt", {6.00, 4.20, 4.20, 5.20, 2.40, 5.00, 5.00, 3.60}},
  };
  for (const auto& [file, expected] : cases) {
    const auto t = read_accuracy_table(kData / file);
    const auto got = average_rank(t.values, 3);
    v.require(got.size() == expected.size(), std::string(file) + ": row count");
    for (std::size_t m = 0; m < std::min(got.size(), expected.size()); ++m) {
      v.require(std::abs(got[m] - expected[m]) <= 0.005,
                std::string(file) + " " + t.methods[m] + " got " + fmt("%.3f", got[m]));
    }
  }
  return v;
}

// ---------------------------------------------------------------- 2

Verdict gradient_suite() {
  Verdict v;
  double worst = 0.0;
  std::size_t cases = 0;
  for (const auto& c : run_gradcheck_suite(1e-5, 0)) {
    ++cases;
    worst = std::max(worst, c.max_rel_error);
    v.require(c.max_rel_error < 1e-5, c.name + " " + fmt("%.2e", c.max_rel_error));
  }
  if (v.pass) v.detail = std::to_string(cases) + " cases, max rel err " + fmt("%.2e", worst);
  return v;
}

// ---------------------------------------------------------------- 3

Verdict zero_init_and_merge() {
  Verdict v;
  ModelConfig mc;  // desk-scale default
  VitModel fresh(mc);
  VitModel plain(mc);
  plain.set_slot_enabled(AdapterSlot::global, false);
  plain.set_slot_enabled(AdapterSlot::personal, false);
  double zero_gap = 0.0;
  for (std::uint64_t b = 0; b < 5; ++b) {
    const Tensor x = testing::random_tensor({8, mc.channels, mc.image_size, mc.image_size}, 50 + b, 0, 1);
    zero_gap = std::max(zero_gap, max_diff(fresh.forward(x).logits, plain.forward(x).logits));
  }
  v.require(zero_gap <= 1e-12, "fresh adapters moved logits by " + fmt("%.2e", zero_gap));

  // Give both slots nonzero B, then fold them into W0 of an adapter-free copy.
  VitModel adapted(mc);
  std::uint64_t seed = 900;
  for (const auto& [name, t] : adapted.named_tensors()) {
    if (name.ends_with(".B")) adapted.assign(name, scale(testing::random_tensor(t.shape(), seed++), 0.2));
  }
  VitModel merged(mc);
  merged.set_slot_enabled(AdapterSlot::global, false);
  merged.set_slot_enabled(AdapterSlot::personal, false);
  for (std::size_t b = 0; b < mc.num_blocks; ++b) {
    for (Projection p : {Projection::query, Projection::key, Projection::value}) {
      const auto& layer = adapted.projection(b, p);
      const Tensor w = merge_adapter(merge_adapter(layer.W0(), layer.adapter(AdapterSlot::global)),
                                     layer.adapter(AdapterSlot::personal));
      merged.assign("blocks." + std::to_string(b) + "." + projection_name(p) + ".W0", w);
    }
  }
  double merge_gap = 0.0;
  for (std::uint64_t b = 0; b < 10; ++b) {  // 10 batches of 10 inputs
    const Tensor x = testing::random_tensor({10, mc.channels, mc.image_size, mc.image_size}, 700 + b, 0, 1);
    merge_gap = std::max(merge_gap, max_diff(adapted.forward(x).logits, merged.forward(x).logits));
  }
  v.require(merge_gap <= 1e-10, "merged forward differs by " + fmt("%.2e", merge_gap));
  if (v.pass) v.detail = "zero-init gap " + fmt("%.1e", zero_gap) + ", merge gap " + fmt("%.1e", merge_gap);
  return v;
}

// ---------------------------------------------------------------- 4

ModelConfig protocol_model() {
  ModelConfig mc;
  mc.image_size = 16;
  mc.patch_size = 4;
  mc.embed_dim = 32;
  mc.num_heads = 2;
  mc.num_blocks = 2;
  mc.mlp_dim = 48;
  mc.num_classes = 4;
  mc.rank_global = 4;
  mc.rank_personal = 4;
  return mc;
}

struct Trajectory {
  std::vector<TensorMap> aggregates;        // server state after each round
  std::vector<std::vector<Tensor>> finals;  // per client, every named tensor
  std::vector<ClientUpdate> messages;
};

// 5 rounds of `method` over 3 clients; `reverse` feeds clients in reverse order.
Trajectory federate(const FederatedDataset& ds, Method method, double lambda, bool reverse) {
  const MethodSpec spec = MethodSpec::make(method, lambda);
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < ds.clients.size(); ++k) {
    ClientState c{k, VitModel(protocol_model()), {}, &ds.clients[k], 0};
    c.model.set_slot_enabled(AdapterSlot::personal, spec.personal_slot);
    clients.push_back(std::move(c));
  }
  if (reverse) std::reverse(clients.begin(), clients.end());
  ServerState server;
  for (const auto& n : shared_names(clients[0].model, spec))
    server.global.emplace(n, clients[0].model.tensor(n).detach());
  TrainConfig train;
  train.batch_size = 8;
  train.lambda = lambda;
  Trajectory t;
  RoundOptions opts;
  opts.record_wall_clock = false;
  opts.on_message = [&](const ClientUpdate& u) { t.messages.push_back(u); };
  for (int r = 0; r < 5; ++r) {
    run_round(server, clients, spec, train, opts);
    t.aggregates.push_back(server.global);
  }
  std::sort(clients.begin(), clients.end(),
            [](const ClientState& a, const ClientState& b) { return a.id < b.id; });
  for (const auto& c : clients) {
    std::vector<Tensor> all;
    for (const auto& [n, x] : c.model.named_tensors()) all.push_back(x);
    t.finals.push_back(std::move(all));
  }
  return t;
}

double trajectory_gap(const Trajectory& a, const Trajectory& b) {
  double gap = 0.0;
  for (std::size_t r = 0; r < a.aggregates.size(); ++r)
    for (const auto& [n, x] : a.aggregates[r]) gap = std::max(gap, max_diff(x, b.aggregates[r].at(n)));
  for (std::size_t k = 0; k < a.finals.size(); ++k)
    for (std::size_t i = 0; i < a.finals[k].size(); ++i)
      gap = std::max(gap, max_diff(a.finals[k][i], b.finals[k][i]));
  return gap;
}

Verdict protocol_invariants() {
  Verdict v;
  SyntheticDatasetConfig dc;
  dc.num_clients = 3;
  dc.num_classes = 4;
  dc.image_size = 16;
  dc.samples_per_client = {60, 45, 30};
  const FederatedDataset ds = generate_dataset(dc);

  const VitModel initial(protocol_model());
  const ParamPartition part = param_partition(initial);

  for (Method m : all_methods()) {
    const MethodSpec spec = MethodSpec::make(m, 1.0);
    if (!spec.federated) continue;
    const std::string name = spec.name();
    const Trajectory t = federate(ds, m, 1.0, false);

    // (a) privacy of every message
    for (const auto& u : t.messages) {
      for (const auto& [n, x] : u.tensors) {
        v.require(n.find("personal") == std::string::npos, name + " sent " + n);
        if (m == Method::fedsa)
          v.require(n.find("global.B") == std::string::npos, name + " sent " + n);
      }
    }
    v.require(t.messages.size() == 15, name + ": expected 15 messages");

    // (b) frozen tensors bit-unchanged
    const auto names = initial.named_tensors();
    for (const auto& finals : t.finals) {
      for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string& n = names[i].first;
        const bool base = std::find(part.base_frozen.begin(), part.base_frozen.end(), n) !=
                          part.base_frozen.end();
        const bool ffa_a = m == Method::ffa_lora && n.ends_with("global.A");
        if ((base || ffa_a) && !testing::bit_equal(finals[i].data(), names[i].second.data()))
          v.require(false, name + " changed frozen " + n);
      }
    }

    // (c) client-order permutation
    const double perm = trajectory_gap(t, federate(ds, m, 1.0, true));
    v.require(perm < 1e-12, name + " permutation gap " + fmt("%.2e", perm));
  }

  // (d) lambda = 0 equivalence
  const Trajectory pal = federate(ds, Method::fedpal, 0.0, false);
  for (Method m : {Method::fedopal_w, Method::fedopal_r}) {
    const double gap = trajectory_gap(pal, federate(ds, m, 0.0, false));
    v.require(gap <= 1e-12, std::string(method_name(m)) + " at lambda 0 differs by " + fmt("%.2e", gap));
  }
  if (v.pass) v.detail = "7 federated methods x 3 clients x 5 rounds";
  return v;
}

// ---------------------------------------------------------------- 5

Verdict one_client_equivalence() {
  Verdict v;
  ExperimentConfig cfg;
  cfg.model = protocol_model();
  SyntheticDatasetConfig dc;
  dc.num_clients = 3;
  dc.num_classes = 4;
  dc.image_size = 16;
  dc.samples_per_client = {60, 45, 30};
  cfg.data = dc;
  cfg.rounds = 4;
  cfg.record_wall_clock = false;
  const FederatedDataset ds = generate_dataset(dc);
  const FederatedDataset pooled = ds.pooled();
  TrainConfig train;
  train.batch_size = 8;

  std::vector<ClientState> central, fed;
  run_method(cfg, ds, Method::centralized, 0, train, {}, &central);
  run_method(cfg, pooled, Method::fedit, 0, train, {}, &fed);
  const auto a = central.at(0).model.named_tensors();
  const auto b = fed.at(0).model.named_tensors();
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, max_diff(a[i].second, b[i].second));
  // Training must actually have moved the adapters for this to mean anything.
  const VitModel start = build_model(cfg, 0);
  const double moved = max_diff(start.tensor("head.weight"), fed[0].model.tensor("head.weight"));
  v.require(moved > 1e-6, "no training happened");
  v.require(gap < 1e-9, "max parameter difference " + fmt("%.2e", gap));
  if (v.pass) v.detail = "max parameter difference " + fmt("%.1e", gap);
  return v;
}

// ---------------------------------------------------------------- 6-8

struct DeskContext {
  ExperimentConfig config;
  FederatedDataset dataset;
  fs::path base;
  double pretrain_seconds = 0.0;
};

fs::path pretrain_to(const ExperimentConfig& config, const fs::path& path, double* seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  const VitModel base = pretrain_backbone(config.model, PretrainConfig{}, 0);
  save_base_checkpoint(base, path);
  *seconds = seconds_since(t0);
  return path;
}

Verdict regularizer_effect(const DeskContext& desk) {
  Verdict v;
  TrainConfig train;
  train.batch_size = desk.config.batch_size;
  train.lr = desk.config.learning_rates.front();
  train.momentum = desk.config.momenta.front();
  train.augment = desk.config.augment;
  train.lambda = 1.0;
  auto mean_similarity = [&](Method m) {
    double total = 0.0;
    std::size_t n = 0;
    for (auto seed : desk.config.seeds) {
      for (double s : run_method(desk.config, desk.dataset, m, seed, train).client_similarity) {
        total += s;
        ++n;
      }
    }
    return total / static_cast<double>(n);
  };
  const double r = mean_similarity(Method::fedopal_r);
  const double pal = mean_similarity(Method::fedpal);
  v.require(r < 0.1, "FedOPAL-R |cos| " + fmt("%.3f", r) + " not below 0.1");
  v.require(pal > 0.2, "FedPAL |cos| " + fmt("%.3f", pal) + " not above 0.2");
  if (v.pass) v.detail = "FedOPAL-R |cos| " + fmt("%.3f", r) + ", FedPAL |cos| " + fmt("%.3f", pal);
  return v;
}

Verdict desk_experiment(const DeskContext& desk, const fs::path& out) {
  Verdict v;
  fs::remove_all(out);
  const ExperimentResult result = run_and_export(desk.config, desk.dataset, out);
  const auto& t = result.table;
  v.require(t.rows.size() == 9, "expected 9 methods");
  v.require(result.runs.size() == 27, "expected 27 method-seed runs");
  const double local = t.row("Local").avg_mean;
  std::string summary = "Local " + fmt("%.3f", local);
  for (const char* m : {"FedPAL", "FedOPAL-W", "FedOPAL-R"}) {
    const double acc = t.row(m).avg_mean;
    summary += std::string(", ") + m + " " + fmt("%.3f", acc);
    v.require(acc > local, std::string(m) + " " + fmt("%.3f", acc) + " not above Local " + fmt("%.3f", local));
  }
  for (const char* f : {"results.tsv", "accuracies.jsonl", "rounds.jsonl", "class_distribution.svg"})
    v.require(fs::exists(out / f) && fs::file_size(out / f) > 0, std::string("missing ") + f);
  v.detail = v.pass ? summary : summary + "; " + v.detail;
  return v;
}

Verdict determinism(const DeskContext& desk, const fs::path& first, const fs::path& work) {
  Verdict v;
  // Repeat from scratch: a fresh base, then the full experiment.
  double secs = 0.0;
  DeskContext again = desk;
  again.base = pretrain_to(desk.config, work / "base_again.bin", &secs);
  again.config.base_checkpoint = again.base;
  v.require(slurp(again.base) == slurp(desk.base), "base checkpoints differ");
  const fs::path second = work / "desk_repeat";
  fs::remove_all(second);
  run_and_export(again.config, again.dataset, second);
  for (const char* f : {"results.tsv", "accuracies.jsonl", "rounds.jsonl", "class_distribution.svg"})
    v.require(slurp(first / f) == slurp(second / f), std::string(f) + " differs");
  if (v.pass) v.detail = "results.tsv, accuracies.jsonl, rounds.jsonl, plot byte-identical";
  return v;
}

struct Line {
  int number;
  const char* name;
  double limit_seconds;  // 0 = no limit
};

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  fs::create_directories(work);
  bool all = true;
  // ctest hides output of passing tests, so the report also goes to a file.
  std::ofstream log(work / "report.txt");
  auto emit = [&](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    log << line << std::flush;
  };

  auto report = [&](const Line& line, const std::function<Verdict()>& check, double extra = 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = seconds_since(t0) + extra;
    if (line.limit_seconds > 0 && secs >= line.limit_seconds) {
      v.require(false, "runtime " + fmt("%.1f s", secs) + " over budget " + fmt("%.0f s", line.limit_seconds));
    }
    all = all && v.pass;
    char head[128];
    std::snprintf(head, sizeof head, "[%s] criterion %d %-28s %8.1f s  ", v.pass ? "PASS" : "FAIL",
                  line.number, line.name, secs);
    emit(head + v.detail + "\n");
  };

  report({1, "rank fixture", 1.0}, rank_fixture);
  report({2, "gradient suite", 60.0}, gradient_suite);
  report({3, "zero-init and merge", 0}, zero_init_and_merge);
  report({4, "protocol invariants", 300.0}, protocol_invariants);
  report({5, "one-client equivalence", 0}, one_client_equivalence);

  DeskContext desk;
  std::string setup_error;
  try {
    desk.config = load_experiment_config(kConfigs / "desk.json");
    desk.dataset = resolve_dataset(desk.config);
    desk.base = pretrain_to(desk.config, work / "base.bin", &desk.pretrain_seconds);
    desk.config.base_checkpoint = desk.base;
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  emit("       desk base pretraining " + fmt("%.1f", desk.pretrain_seconds) +
       " s (counted in criteria 6 and 7)\n");
  auto needs_desk = [&](std::function<Verdict()> f) {
    return [f, &setup_error]() {
      if (!setup_error.empty()) return Verdict{false, "desk setup failed: " + setup_error};
      return f();
    };
  };
  const fs::path first = work / "desk";
  report({6, "regularizer effect", 900.0},
         needs_desk([&] { return regularizer_effect(desk); }), desk.pretrain_seconds);
  report({7, "desk experiment", 3600.0},
         needs_desk([&] { return desk_experiment(desk, first); }), desk.pretrain_seconds);
  report({8, "determinism", 0}, needs_desk([&] { return determinism(desk, first, work); }));

  emit(all ? "all criteria passed\n" : "some criteria FAILED\n");
  return all ? 0 : 1;
}
