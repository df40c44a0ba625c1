#include "fedopal/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>

#include "fedopal/error.hpp"
#include "fedopal/rng.hpp"

namespace fedopal {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Names selected by a per-group predicate over the partition.
template <typename Pick>
std::vector<std::string> select_names(const VitModel& model,
                                      const MethodSpec& spec, Pick pick) {
  const ParamPartition part = param_partition(model);
  std::vector<std::string> out;
  if (pick(spec.head)) out.insert(out.end(), part.head.begin(), part.head.end());
  for (const auto& n : part.adapters_global) {
    if (pick(ends_with(n, ".A") ? spec.global_a : spec.global_b)) out.push_back(n);
  }
  if (spec.personal_slot) {
    for (const auto& n : part.adapters_personal) {
      if (pick(ends_with(n, ".A") ? spec.personal_a : spec.personal_b))
        out.push_back(n);
    }
  }
  return out;
}

TensorMap snapshot(const VitModel& model, const std::vector<std::string>& names) {
  TensorMap out;
  for (const auto& n : names) out.emplace(n, model.tensor(n).detach());
  return out;
}

void load_snapshot(VitModel& model, const TensorMap& tensors) {
  for (const auto& [name, t] : tensors) model.assign(name, t);
}

struct Phase {
  bool global_on = true;
  bool personal_on = false;
  std::vector<std::string> trainable;
  Regularizer regularizer = Regularizer::none;
};

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::centralized:
      return "Centralized";
    case Method::local:
      return "Local";
    case Method::fedit:
      return "FedIT";
    case Method::ffa_lora:
      return "FFA-LoRA";
    case Method::fedsa:
      return "FedSA";
    case Method::feddpa:
      return "FedDPA";
    case Method::fedpal:
      return "FedPAL";
    case Method::fedopal_w:
      return "FedOPAL-W";
    case Method::fedopal_r:
      return "FedOPAL-R";
  }
  return "?";
}

std::vector<Method> all_methods() {
  return {Method::centralized, Method::local,  Method::fedit,
          Method::ffa_lora,    Method::fedsa,  Method::feddpa,
          Method::fedpal,      Method::fedopal_w, Method::fedopal_r};
}

Method parse_method(const std::string& name) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  for (auto m : all_methods()) {
    if (lower(method_name(m)) == lower(name)) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

MethodSpec MethodSpec::make(Method method, double lambda, bool share_head) {
  MethodSpec s;
  s.method = method;
  const TensorPolicy shared{true, true};
  const TensorPolicy kept{true, false};
  s.head = shared;
  s.global_a = shared;
  s.global_b = shared;
  switch (method) {
    case Method::centralized:
    case Method::local:
      s.federated = false;
      s.head = s.global_a = s.global_b = kept;
      break;
    case Method::fedit:
      break;
    case Method::ffa_lora:
      s.global_a = TensorPolicy{false, false};
      break;
    case Method::fedsa:
      s.global_b = kept;
      break;
    case Method::feddpa:
      s.personal_slot = true;
      s.sequential_dual = true;
      s.personal_a = s.personal_b = kept;
      break;
    case Method::fedpal:
    case Method::fedopal_w:
    case Method::fedopal_r:
      s.personal_slot = true;
      s.personal_a = s.personal_b = kept;
      if (method == Method::fedopal_w) s.regularizer = Regularizer::weight;
      if (method == Method::fedopal_r) s.regularizer = Regularizer::representation;
      s.lambda = method == Method::fedpal ? 0.0 : lambda;
      break;
  }
  if (!share_head) s.head.aggregated = false;
  if (s.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  return s;
}

std::vector<std::string> trainable_names(const VitModel& model,
                                         const MethodSpec& spec) {
  return select_names(model, spec, [](const TensorPolicy& p) { return p.trainable; });
}

std::vector<std::string> shared_names(const VitModel& model,
                                      const MethodSpec& spec) {
  if (!spec.federated) return {};
  return select_names(model, spec, [](const TensorPolicy& p) { return p.aggregated; });
}

ClientUpdate local_train_round(ClientState& client, const TensorMap& shared,
                               const MethodSpec& spec, const TrainConfig& train,
                               std::size_t round) {
  VitModel& model = client.model;
  const auto expected = shared_names(model, spec);
  if (shared.size() != expected.size()) {
    throw IncompatibleError("client " + std::to_string(client.id) +
                            ": snapshot carries " + std::to_string(shared.size()) +
                            " tensors, method " + spec.name() + " shares " +
                            std::to_string(expected.size()));
  }
  for (const auto& n : expected) {
    const auto it = shared.find(n);
    if (it == shared.end()) {
      throw IncompatibleError("client " + std::to_string(client.id) +
                              ": snapshot lacks " + n);
    }
    if (it->second.shape() != model.tensor(n).shape()) {
      throw IncompatibleError("client " + std::to_string(client.id) +
                              ": snapshot tensor " + n + " has shape " +
                              shape_str(it->second.shape()));
    }
  }
  load_snapshot(model, shared);

  ClientUpdate update;
  update.client = client.id;
  update.stats.client = client.id;
  const std::vector<Sample> empty;
  const auto& samples = client.data ? client.data->train : empty;
  update.sample_count = samples.size();
  update.stats.samples = samples.size();

  if (!samples.empty()) {
    if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<Phase> phases;
    if (spec.sequential_dual) {
      MethodSpec first = spec;
      first.personal_slot = false;
      phases.push_back({true, false, trainable_names(model, first), Regularizer::none});
      MethodSpec second = spec;
      second.head.trainable = second.global_a.trainable =
          second.global_b.trainable = false;
      phases.push_back({true, true, trainable_names(model, second), Regularizer::none});
    } else {
      phases.push_back({true, spec.personal_slot, trainable_names(model, spec),
                        spec.regularizer});
    }

    Rng rng(mix_seed(client.seed, round, client.id));
    double task_sum = 0.0;
    double orth_sum = 0.0;
    for (const Phase& phase : phases) {
      model.set_slot_enabled(AdapterSlot::global, phase.global_on);
      model.set_slot_enabled(AdapterSlot::personal, phase.personal_on);
      model.set_trainable({phase.trainable.begin(), phase.trainable.end()});
      std::vector<Tensor> params;
      std::vector<Tensor> velocities;
      for (const auto& n : phase.trainable) {
        Tensor p = model.tensor(n);
        auto [it, fresh] = client.velocities.try_emplace(n);
        if (fresh) it->second = Tensor::zeros(p.shape());
        params.push_back(p);
        velocities.push_back(it->second);
      }

      std::vector<std::size_t> order(samples.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t at = 0; at < order.size(); at += train.batch_size) {
        const std::size_t end = std::min(order.size(), at + train.batch_size);
        const std::span<const std::size_t> idx(order.data() + at, end - at);
        const Batch batch = make_batch(samples, idx, train.augment ? &rng : nullptr);
        const bool capture = phase.regularizer == Regularizer::representation;
        ModelOutput out = model.forward(batch.images, capture);
        const Tensor task = softmax_cross_entropy(out.logits, batch.labels);
        Tensor orth;
        if (phase.regularizer == Regularizer::weight) {
          std::vector<AdapterPair> pairs;
          for (auto& [g, p] : model.adapter_a_pairs()) pairs.push_back({g, p});
          orth = orth_weight_loss(pairs, spec.stop_global_gradient);
        } else if (phase.regularizer == Regularizer::representation) {
          orth = orth_repr_loss(out.capture, spec.stop_global_gradient);
        }
        const LossBreakdown loss = total_loss(task, orth, spec.lambda);
        backward(loss.total);
        sgd_step(params, velocities, train.lr, train.momentum);
        task_sum += loss.task_loss;
        orth_sum += loss.orth_loss;
        update.step_losses.push_back(loss.task_loss);
        ++update.stats.steps;
      }
    }
    model.set_trainable({});
    model.set_slot_enabled(AdapterSlot::global, true);
    model.set_slot_enabled(AdapterSlot::personal, spec.personal_slot);
    const double steps = static_cast<double>(update.stats.steps);
    update.stats.task_loss = task_sum / steps;
    update.stats.orth_loss = orth_sum / steps;
  }
  update.tensors = snapshot(model, expected);
  return update;
}

TensorMap fedavg_aggregate(
    const std::vector<std::pair<TensorMap, std::size_t>>& updates) {
  if (updates.empty()) throw ContractError("fedavg_aggregate: no updates");
  const TensorMap& first = updates.front().first;
  std::size_t total = 0;
  for (const auto& [tensors, n] : updates) {
    if (n == 0) throw ContractError("fedavg_aggregate: zero sample count");
    if (tensors.size() != first.size()) {
      throw ShapeError("fedavg_aggregate: updates carry different tensor sets");
    }
    for (const auto& [name, t] : first) {
      const auto it = tensors.find(name);
      if (it == tensors.end() || it->second.shape() != t.shape()) {
        throw ShapeError("fedavg_aggregate: tensor " + name +
                         " missing or mis-shaped in an update");
      }
    }
    total += n;
  }
  // Running weighted mean m ← m + (n_c / N_c)(x_c − m), N_c the cumulative
  // count: equal to Σ (n_c/N)·x_c, and exact when all updates agree.
  TensorMap out;
  for (const auto& [name, t] : first) {
    std::vector<double> m(t.data().begin(), t.data().end());
    std::size_t seen = updates.front().second;
    for (std::size_t u = 1; u < updates.size(); ++u) {
      const auto& [tensors, n] = updates[u];
      seen += n;
      const double w = static_cast<double>(n) / static_cast<double>(seen);
      const auto x = tensors.at(name).data();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += w * (x[i] - m[i]);
    }
    out.emplace(name, Tensor::from(t.shape(), std::move(m)));
  }
  (void)total;
  return out;
}

void run_round(ServerState& server, std::vector<ClientState>& clients,
               const MethodSpec& spec, const TrainConfig& train,
               const RoundOptions& options) {
  if (clients.empty()) throw ContractError("run_round: no clients");
  const auto start = std::chrono::steady_clock::now();
  const TensorMap broadcast = server.global;
  std::vector<ClientUpdate> updates(clients.size());
  std::vector<std::exception_ptr> errors(clients.size());
  const auto n = static_cast<std::ptrdiff_t>(clients.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(std::max<std::size_t>(1, options.threads))) if (options.threads > 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      updates[i] = local_train_round(clients[i], broadcast, spec, train, server.round);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client < b.client; });
  std::vector<std::pair<TensorMap, std::size_t>> weighted;
  for (const auto& u : updates) {
    if (options.on_message) options.on_message(u);
    if (u.sample_count > 0) weighted.emplace_back(u.tensors, u.sample_count);
  }
  if (!weighted.empty() && !broadcast.empty()) {
    server.global = fedavg_aggregate(weighted);
  }
  ++server.round;

  RoundRecord record;
  record.method = spec.name();
  record.seed = options.seed;
  record.round = server.round;
  std::vector<std::size_t> by_id(clients.size());
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(),
            [&](std::size_t a, std::size_t b) { return clients[a].id < clients[b].id; });
  for (std::size_t i = 0; i < by_id.size(); ++i) {
    ClientState& c = clients[by_id[i]];
    load_snapshot(c.model, server.global);
    ClientRoundStats stats = updates[i].stats;
    if (c.data && !c.data->val.empty()) {
      stats.val_balanced_accuracy = evaluate_balanced_accuracy(c.model, c.data->val);
    }
    record.clients.push_back(stats);
  }
  record.wall_ms = options.record_wall_clock ? elapsed_ms(start) : 0.0;
  server.log.push_back(std::move(record));
}

// ---------------------------------------------------------------- evaluation

std::vector<std::size_t> predict(const VitModel& model,
                                 std::span<const Sample> samples,
                                 std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < samples.size(); at += batch_size) {
    const std::size_t end = std::min(samples.size(), at + batch_size);
    idx.resize(end - at);
    std::iota(idx.begin(), idx.end(), at);
    const Batch batch = make_batch(samples, idx, nullptr);
    const Tensor logits = model.forward(batch.images).logits;
    const std::size_t C = logits.cols();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = logits.data().subspan(b * C, C);
      out.push_back(static_cast<std::size_t>(
          std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double evaluate_balanced_accuracy(const VitModel& model,
                                  std::span<const Sample> samples,
                                  std::size_t batch_size) {
  const auto pred = predict(model, samples, batch_size);
  std::vector<std::size_t> targets;
  for (const auto& s : samples) targets.push_back(s.label);
  return balanced_accuracy(pred, targets, model.config().num_classes);
}

double representation_similarity(const VitModel& model,
                                 std::span<const Sample> samples,
                                 std::size_t batch_size) {
  if (samples.empty()) throw ContractError("representation_similarity: no samples");
  if (!model.slot_enabled(AdapterSlot::global) ||
      !model.slot_enabled(AdapterSlot::personal)) {
    throw ContractError("representation_similarity needs both adapter slots");
  }
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t at = 0; at < samples.size(); at += batch_size) {
    const std::size_t end = std::min(samples.size(), at + batch_size);
    idx.resize(end - at);
    std::iota(idx.begin(), idx.end(), at);
    const Batch batch = make_batch(samples, idx, nullptr);
    const ModelOutput out = model.forward(batch.images, true);
    for (const auto& p : out.capture.pairs) {
      total += std::abs(cosine_similarity(p.global, p.personal).item());
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

PretrainReport pretrain_base(VitModel& model, std::span<const Sample> pool,
                             const PretrainConfig& config, std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("pretraining pool is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  model.set_slot_enabled(AdapterSlot::global, false);
  model.set_slot_enabled(AdapterSlot::personal, false);
  const ParamPartition part = param_partition(model);
  std::set<std::string> names(part.base_frozen.begin(), part.base_frozen.end());
  names.insert(part.head.begin(), part.head.end());
  model.set_trainable(names);
  std::vector<Tensor> params;
  std::vector<Tensor> velocities;
  for (const auto& n : names) {
    params.push_back(model.tensor(n));
    velocities.push_back(Tensor::zeros(params.back().shape()));
  }
  PretrainReport report;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(seed, epoch, 0xba5e));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      const std::size_t end = std::min(order.size(), at + config.batch_size);
      const Batch batch = make_batch(
          pool, std::span<const std::size_t>(order.data() + at, end - at), &rng);
      const Tensor loss =
          softmax_cross_entropy(model.forward(batch.images).logits, batch.labels);
      backward(loss);
      sgd_step(params, velocities, config.lr, config.momentum);
      loss_sum += loss.item();
      ++steps;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(steps));
  }
  model.set_trainable({});
  const auto pred = predict(model, pool);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) correct += pred[i] == pool[i].label;
  report.train_accuracy = static_cast<double>(correct) / static_cast<double>(pool.size());
  model.set_slot_enabled(AdapterSlot::global, true);
  model.set_slot_enabled(AdapterSlot::personal, true);
  return report;
}

std::vector<Sample> pretrain_pool(const PretrainConfig& config,
                                  std::size_t image_size, std::size_t channels) {
  SyntheticDatasetConfig pc;
  pc.num_clients = 1;
  pc.num_classes = config.pool_classes;
  pc.image_size = image_size;
  pc.channels = channels;
  pc.samples_per_client = {config.pool_classes * config.per_class};
  pc.noise_sigma = config.noise_sigma;
  pc.pattern_seed = config.pattern_seed;
  pc.feature_shift = 0.0;
  return generate_pool(pc, config.per_class);
}

VitModel pretrain_backbone(const ModelConfig& target, const PretrainConfig& config,
                           std::uint64_t seed, PretrainReport* report) {
  ModelConfig mc = target;
  mc.num_classes = config.pool_classes;
  mc.seed = seed;
  VitModel model(mc);
  const auto pool = pretrain_pool(config, mc.image_size, mc.channels);
  PretrainReport r = pretrain_base(model, pool, config, seed);
  if (report) *report = std::move(r);
  return model;
}

// ---------------------------------------------------------------- experiments

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("methods: at least one method required");
  model.validate();
  if (data) data->validate();
  if (!data && dataset_path.empty()) {
    throw ConfigError("dataset: either 'data' or 'dataset' must be given");
  }
  if (rounds == 0) throw ConfigError("rounds must be positive");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (learning_rates.empty()) throw ConfigError("learning_rates must not be empty");
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw ConfigError("learning_rates entries must be positive");
  }
  if (momenta.empty()) throw ConfigError("momenta must not be empty");
  for (double m : momenta) {
    if (!(m >= 0.0 && m < 1.0)) throw ConfigError("momenta entries must lie in [0, 1)");
  }
  if (lambdas.empty()) throw ConfigError("lambdas must not be empty");
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("lambdas entries must be non-negative");
  }
}

VitModel build_model(const ExperimentConfig& config, std::uint64_t seed) {
  ModelConfig mc = config.model;
  mc.seed = seed;
  VitModel model(mc);
  if (!config.base_checkpoint.empty()) {
    load_base_checkpoint(model, config.base_checkpoint);
  }
  return model;
}

MethodRunSummary run_method(const ExperimentConfig& config,
                            const FederatedDataset& dataset, Method method,
                            std::uint64_t seed, const TrainConfig& train,
                            const ExperimentHooks& hooks,
                            std::vector<ClientState>* final_clients) {
  const bool regularized = method == Method::fedopal_w || method == Method::fedopal_r;
  const MethodSpec spec =
      MethodSpec::make(method, regularized ? train.lambda : 0.0, config.share_head);
  const std::size_t K = dataset.clients.size();
  MethodRunSummary summary;
  summary.method = spec.name();
  summary.seed = seed;
  summary.lr = train.lr;
  summary.momentum = train.momentum;
  summary.lambda = spec.lambda;

  auto make_client = [&](std::size_t id, const ClientSplits* data) {
    ClientState c{id, build_model(config, seed), {}, data, seed};
    c.model.set_slot_enabled(AdapterSlot::personal, spec.personal_slot);
    return c;
  };
  auto emit = [&](RoundRecord r) {
    if (hooks.on_round) hooks.on_round(r);
  };

  std::vector<ClientState> clients;
  std::optional<FederatedDataset> pooled;
  if (method == Method::centralized) {
    pooled = dataset.pooled();
    clients.push_back(make_client(0, &pooled->clients[0]));
  } else {
    for (std::size_t k = 0; k < K; ++k) clients.push_back(make_client(k, &dataset.clients[k]));
  }

  if (spec.federated) {
    ServerState server;
    server.global = snapshot(clients.front().model, shared_names(clients.front().model, spec));
    RoundOptions opts;
    opts.seed = seed;
    opts.threads = config.threads;
    opts.record_wall_clock = config.record_wall_clock;
    opts.on_message = hooks.on_message;
    for (std::size_t r = 0; r < config.rounds; ++r) {
      run_round(server, clients, spec, train, opts);
      emit(server.log.back());
    }
  } else {
    for (std::size_t r = 0; r < config.rounds; ++r) {
      const auto start = std::chrono::steady_clock::now();
      RoundRecord record;
      record.method = spec.name();
      record.seed = seed;
      record.round = r + 1;
      for (auto& c : clients) {
        ClientUpdate u = local_train_round(c, {}, spec, train, r);
        if (c.data && !c.data->val.empty()) {
          u.stats.val_balanced_accuracy = evaluate_balanced_accuracy(c.model, c.data->val);
        }
        record.clients.push_back(u.stats);
      }
      record.wall_ms = config.record_wall_clock ? elapsed_ms(start) : 0.0;
      emit(std::move(record));
    }
  }

  for (std::size_t k = 0; k < K; ++k) {
    const VitModel& model =
        method == Method::centralized ? clients[0].model : clients[k].model;
    summary.client_accuracy.push_back(
        evaluate_balanced_accuracy(model, dataset.clients[k].test));
    if (spec.personal_slot) {
      summary.client_similarity.push_back(
          representation_similarity(model, dataset.clients[k].test));
    }
  }
  if (final_clients) *final_clients = std::move(clients);
  return summary;
}

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const FederatedDataset& dataset,
                                const ExperimentHooks& hooks) {
  config.validate();
  if (dataset.config.num_classes != config.model.num_classes) {
    throw ConfigError("model.num_classes (" + std::to_string(config.model.num_classes) +
                      ") differs from the dataset's " +
                      std::to_string(dataset.config.num_classes));
  }
  if (dataset.config.image_size != config.model.image_size ||
      dataset.config.channels != config.model.channels) {
    throw ConfigError("model image_size/channels do not match the dataset");
  }
  ExperimentResult result;
  for (Method m : config.methods) {
    TrainConfig train;
    train.batch_size = config.batch_size;
    train.augment = config.augment;
    train.lr = config.learning_rates.front();
    train.momentum = config.momenta.front();
    train.lambda = config.lambdas.front();
    const bool regularized = m == Method::fedopal_w || m == Method::fedopal_r;
    const std::vector<double> lambdas =
        regularized ? config.lambdas : std::vector<double>{train.lambda};
    if (config.learning_rates.size() * config.momenta.size() * lambdas.size() > 1) {
      // Grid search on the first seed by mean final validation accuracy.
      double best = -1.0;
      for (double lr : config.learning_rates) {
        for (double mom : config.momenta) {
          for (double lam : lambdas) {
            TrainConfig t = train;
            t.lr = lr;
            t.momentum = mom;
            t.lambda = lam;
            double val = 0.0;
            std::size_t n = 0;
            RoundObserver grab = [&](const RoundRecord& r) {
              if (r.round != config.rounds) return;
              for (const auto& c : r.clients) {
                val += c.val_balanced_accuracy;
                ++n;
              }
            };
            run_method(config, dataset, m, config.seeds.front(), t, {grab, {}});
            const double score = n ? val / static_cast<double>(n) : 0.0;
            if (score > best) {
              best = score;
              train = t;
            }
          }
        }
      }
    }
    for (auto seed : config.seeds) {
      MethodRunSummary run = run_method(config, dataset, m, seed, train, hooks);
      for (std::size_t k = 0; k < run.client_accuracy.size(); ++k) {
        result.records.push_back({run.method, seed, k, run.client_accuracy[k]});
      }
      result.runs.push_back(std::move(run));
    }
  }
  result.table = build_metrics_table(result.records, {method_name(Method::centralized)});
  return result;
}

}  // namespace fedopal
