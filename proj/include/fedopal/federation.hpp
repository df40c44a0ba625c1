#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedopal/data.hpp"
#include "fedopal/metrics.hpp"
#include "fedopal/model.hpp"
#include "fedopal/regularizers.hpp"

namespace fedopal {

enum class Method {
  centralized,
  local,
  fedit,
  ffa_lora,
  fedsa,
  feddpa,
  fedpal,
  fedopal_w,
  fedopal_r,
};

const char* method_name(Method m);
/// Accepts the display names ("FedOPAL-R") case-insensitively.
Method parse_method(const std::string& name);
std::vector<Method> all_methods();

struct TensorPolicy {
  bool trainable = false;
  bool aggregated = false;
};

/// Which tensors a method trains and which it shares with the server.
struct MethodSpec {
  Method method = Method::fedit;
  bool federated = true;
  bool personal_slot = false;
  /// Global then personal adapter training within each round (FedDPA).
  bool sequential_dual = false;
  TensorPolicy head, global_a, global_b, personal_a, personal_b;
  Regularizer regularizer = Regularizer::none;
  double lambda = 0.0;
  bool stop_global_gradient = false;

  std::string name() const { return method_name(method); }
  static MethodSpec make(Method method, double lambda = 0.0, bool share_head = true);
};

using TensorMap = std::map<std::string, Tensor>;

/// Names of the model tensors a method trains / sends to the server.
std::vector<std::string> trainable_names(const VitModel& model,
                                         const MethodSpec& spec);
std::vector<std::string> shared_names(const VitModel& model,
                                      const MethodSpec& spec);

struct TrainConfig {
  double lr = 2e-2;
  double momentum = 0.5;
  std::size_t batch_size = 16;
  bool augment = true;
  double lambda = 1.0;  // regularizer weight; used by FedOPAL-W/R only
};

struct ClientState {
  std::size_t id = 0;
  VitModel model;
  std::map<std::string, Tensor> velocities;
  const ClientSplits* data = nullptr;
  std::uint64_t seed = 0;
};

struct ClientRoundStats {
  std::size_t client = 0;
  double task_loss = 0.0;  // mean over the round's steps
  double orth_loss = 0.0;
  double val_balanced_accuracy = 0.0;
  std::size_t steps = 0;
  std::size_t samples = 0;
};

struct RoundRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::vector<ClientRoundStats> clients;
  double wall_ms = 0.0;
};

struct ClientUpdate {
  std::size_t client = 0;
  TensorMap tensors;  // aggregated-group tensors only
  std::size_t sample_count = 0;
  ClientRoundStats stats;
  std::vector<double> step_losses;  // task loss per optimizer step
};

/// Sees every client→server message before aggregation.
using MessageObserver = std::function<void(const ClientUpdate&)>;
using RoundObserver = std::function<void(const RoundRecord&)>;

/// One epoch of local SGD on the client's training split (two for the
/// sequential dual schedule), starting from the shared snapshot.
ClientUpdate local_train_round(ClientState& client, const TensorMap& shared,
                               const MethodSpec& spec,
                               const TrainConfig& train, std::size_t round);

/// Σ_c (n_c / Σn) · tensor_c per tensor, summed in the given order.
TensorMap fedavg_aggregate(const std::vector<std::pair<TensorMap, std::size_t>>& updates);

struct ServerState {
  std::size_t round = 0;
  TensorMap global;
  std::vector<RoundRecord> log;
};

struct RoundOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool record_wall_clock = true;
  MessageObserver on_message;
};

/// Broadcast, local training on every client, FedAvg in ascending client id,
/// then each client reloads the new snapshot and reports validation accuracy.
void run_round(ServerState& server, std::vector<ClientState>& clients,
               const MethodSpec& spec, const TrainConfig& train,
               const RoundOptions& options);

// ------------------------------------------------------------- evaluation

std::vector<std::size_t> predict(const VitModel& model,
                                 std::span<const Sample> samples,
                                 std::size_t batch_size = 64);
double evaluate_balanced_accuracy(const VitModel& model,
                                  std::span<const Sample> samples,
                                  std::size_t batch_size = 64);
/// Mean |cos(z_global, z_personal)| over layers and samples (both adapter
/// slots must be enabled).
double representation_similarity(const VitModel& model,
                                  std::span<const Sample> samples,
                                  std::size_t batch_size = 64);

/// Plain epoch training of all base tensors and the head on a pool, adapters
/// disabled. Produces the frozen base for fine-tuning experiments.
struct PretrainConfig {
  std::size_t epochs = 12;
  double lr = 3e-3;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  /// The pool: a broader label space than the fine-tuning task, drawn from a
  /// different pattern family.
  std::size_t pool_classes = 20;
  std::size_t per_class = 200;
  std::uint64_t pattern_seed = 99;
  double noise_sigma = 0.1;
};
struct PretrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};
PretrainReport pretrain_base(VitModel& model, std::span<const Sample> pool,
                             const PretrainConfig& config, std::uint64_t seed);

std::vector<Sample> pretrain_pool(const PretrainConfig& config,
                                  std::size_t image_size, std::size_t channels);

/// Builds a model with `target`'s backbone and a pool-sized head, then
/// pretrains it. The backbone checkpoint of the result fits `target`.
VitModel pretrain_backbone(const ModelConfig& target, const PretrainConfig& config,
                           std::uint64_t seed, PretrainReport* report = nullptr);

// ------------------------------------------------------------- experiments

struct ExperimentConfig {
  std::vector<Method> methods = all_methods();
  ModelConfig model;
  std::optional<SyntheticDatasetConfig> data;  // generated in-process
  std::filesystem::path dataset_path;          // or loaded from disk
  std::filesystem::path base_checkpoint;       // optional frozen base
  std::size_t rounds = 20;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t batch_size = 16;
  std::vector<double> learning_rates = {2e-2};
  std::vector<double> momenta = {0.5};
  std::vector<double> lambdas = {0.01, 0.1, 1.0};  // FedOPAL-W/R; FedPAL is always 0
  /// Head aggregated with the global adapter (true) or kept per client.
  bool share_head = true;
  bool augment = true;
  std::size_t threads = 1;
  bool record_wall_clock = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct MethodRunSummary {
  std::string method;
  std::uint64_t seed = 0;
  double lr = 0.0;
  double momentum = 0.0;
  double lambda = 0.0;
  std::vector<double> client_accuracy;
  /// Mean held-out |cos| per client for dual-adapter methods.
  std::vector<double> client_similarity;
};

struct ExperimentResult {
  MetricsTable table;
  std::vector<AccuracyRecord> records;
  std::vector<MethodRunSummary> runs;
};

struct ExperimentHooks {
  RoundObserver on_round;
  MessageObserver on_message;
};

/// Runs one method for one seed with fixed optimizer settings and lambda.
MethodRunSummary run_method(const ExperimentConfig& config,
                            const FederatedDataset& dataset, Method method,
                            std::uint64_t seed, const TrainConfig& train,
                            const ExperimentHooks& hooks = {},
                            std::vector<ClientState>* final_clients = nullptr);

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const FederatedDataset& dataset,
                                const ExperimentHooks& hooks = {});

/// Builds the model a run starts from: seeded construction, then the base
/// checkpoint when one is configured.
VitModel build_model(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace fedopal
