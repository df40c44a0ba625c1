#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedopal/error.hpp"
#include "fedopal/federation.hpp"

namespace fedopal {
namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) {
      throw ConfigError(where + ": unknown field '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + key + ": wrong type (" + it->dump() + ")");
  }
}

ModelConfig parse_model(const json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  reject_unknown(j,
                 {"image_size", "patch_size", "channels", "embed_dim", "num_heads",
                  "num_blocks", "mlp_dim", "num_classes", "rank_global",
                  "rank_personal", "alpha"},
                 "model");
  ModelConfig m;
  const std::string w = "model.";
  read(j, "image_size", m.image_size, w);
  read(j, "patch_size", m.patch_size, w);
  read(j, "channels", m.channels, w);
  read(j, "embed_dim", m.embed_dim, w);
  read(j, "num_heads", m.num_heads, w);
  read(j, "num_blocks", m.num_blocks, w);
  read(j, "mlp_dim", m.mlp_dim, w);
  read(j, "num_classes", m.num_classes, w);
  read(j, "rank_global", m.rank_global, w);
  read(j, "rank_personal", m.rank_personal, w);
  read(j, "alpha", m.alpha, w);
  return m;
}

SyntheticDatasetConfig parse_data(const json& j) {
  if (!j.is_object()) throw ConfigError("data: expected an object");
  reject_unknown(j,
                 {"num_clients", "num_classes", "image_size", "channels",
                  "samples_per_client", "dirichlet_beta", "feature_shift",
                  "noise_sigma", "seed", "pattern_seed", "test_fraction",
                  "val_fraction"},
                 "data");
  SyntheticDatasetConfig d;
  const std::string w = "data.";
  read(j, "num_clients", d.num_clients, w);
  read(j, "num_classes", d.num_classes, w);
  read(j, "image_size", d.image_size, w);
  read(j, "channels", d.channels, w);
  read(j, "samples_per_client", d.samples_per_client, w);
  read(j, "dirichlet_beta", d.dirichlet_beta, w);
  read(j, "feature_shift", d.feature_shift, w);
  read(j, "noise_sigma", d.noise_sigma, w);
  read(j, "seed", d.seed, w);
  read(j, "pattern_seed", d.pattern_seed, w);
  read(j, "test_fraction", d.test_fraction, w);
  read(j, "val_fraction", d.val_fraction, w);
  return d;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  reject_unknown(j,
                 {"methods", "model", "data", "dataset", "base_checkpoint", "rounds",
                  "seeds", "batch_size", "learning_rates", "momenta", "lambda", "lambdas",
                  "augment", "threads", "record_wall_clock", "share_head"},
                 "config");
  ExperimentConfig c;
  if (const auto it = j.find("methods"); it != j.end()) {
    std::vector<std::string> names;
    read(j, "methods", names, "");
    c.methods.clear();
    for (const auto& n : names) c.methods.push_back(parse_method(n));
  }
  if (const auto it = j.find("model"); it != j.end()) c.model = parse_model(*it);
  if (const auto it = j.find("data"); it != j.end()) c.data = parse_data(*it);
  std::string dataset, base;
  read(j, "dataset", dataset, "");
  read(j, "base_checkpoint", base, "");
  c.dataset_path = dataset;
  c.base_checkpoint = base;
  if (c.data && !c.dataset_path.empty()) {
    throw ConfigError("config: 'data' and 'dataset' are mutually exclusive");
  }
  read(j, "rounds", c.rounds, "");
  read(j, "seeds", c.seeds, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "learning_rates", c.learning_rates, "");
  read(j, "momenta", c.momenta, "");
  if (j.contains("lambda") && j.contains("lambdas")) {
    throw ConfigError("config: give either 'lambda' or 'lambdas', not both");
  }
  if (j.contains("lambda")) {
    double lambda = 0.0;
    read(j, "lambda", lambda, "");
    c.lambdas = {lambda};
  }
  read(j, "lambdas", c.lambdas, "");
  read(j, "augment", c.augment, "");
  read(j, "threads", c.threads, "");
  read(j, "record_wall_clock", c.record_wall_clock, "");
  read(j, "share_head", c.share_head, "");
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig c = parse_experiment_config(text.str());
  const auto dir = path.parent_path();
  if (!c.dataset_path.empty() && c.dataset_path.is_relative()) {
    c.dataset_path = dir / c.dataset_path;
  }
  if (!c.base_checkpoint.empty() && c.base_checkpoint.is_relative()) {
    c.base_checkpoint = dir / c.base_checkpoint;
  }
  return c;
}

}  // namespace fedopal
