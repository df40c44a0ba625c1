#include "fedopal/artifacts.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedopal/error.hpp"

namespace fedopal {

using nlohmann::json;

ArtifactPaths ArtifactPaths::in(const std::filesystem::path& dir) {
  return {dir / "results.tsv", dir / "accuracies.jsonl", dir / "rounds.jsonl",
          dir / "class_distribution.svg"};
}

std::filesystem::path output_dir(const std::optional<std::filesystem::path>& flag,
                                 const std::filesystem::path& fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return fallback;
}

FederatedDataset resolve_dataset(const ExperimentConfig& config) {
  if (config.data) return generate_dataset(*config.data);
  return load_dataset(config.dataset_path);
}

std::string round_record_json(const RoundRecord& record) {
  json clients = json::array();
  for (const auto& c : record.clients) {
    clients.push_back({{"client", c.client},
                       {"task_loss", c.task_loss},
                       {"orth_loss", c.orth_loss},
                       {"val_balanced_accuracy", c.val_balanced_accuracy},
                       {"steps", c.steps},
                       {"samples", c.samples}});
  }
  json j = {{"method", record.method},
            {"seed", record.seed},
            {"round", record.round},
            {"clients", clients},
            {"wall_ms", record.wall_ms}};
  return j.dump();
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_accuracy_log(const ExperimentResult& result,
                        const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& run : result.runs) {
    for (std::size_t k = 0; k < run.client_accuracy.size(); ++k) {
      json j = {{"method", run.method},
                {"seed", run.seed},
                {"client", k},
                {"balanced_accuracy", run.client_accuracy[k]},
                {"lr", run.lr},
                {"momentum", run.momentum},
                {"lambda", run.lambda}};
      if (k < run.client_similarity.size()) j["abs_cosine"] = run.client_similarity[k];
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<AccuracyRecord> read_accuracy_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<AccuracyRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      records.push_back({j.at("method").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                         j.at("client").get<std::size_t>(),
                         j.at("balanced_accuracy").get<double>()});
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return records;
}

ExperimentResult run_and_export(const ExperimentConfig& config,
                                const FederatedDataset& dataset,
                                const std::filesystem::path& dir,
                                const MessageObserver& on_message) {
  std::filesystem::create_directories(dir);
  const ArtifactPaths paths = ArtifactPaths::in(dir);
  plot_class_distribution(dataset.histograms, paths.plot);
  auto rounds = open_out(paths.rounds);
  ExperimentHooks hooks;
  hooks.on_round = [&](const RoundRecord& r) { rounds << round_record_json(r) << '\n' << std::flush; };
  hooks.on_message = on_message;
  ExperimentResult result = run_experiment(config, dataset, hooks);
  write_accuracy_log(result, paths.accuracies);
  export_results(result.table, paths.results);
  return result;
}

AccuracyTable read_accuracy_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  AccuracyTable table;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string method;
    if (!(fields >> method)) continue;
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(number) +
                          ": not a number: '" + token + "'");
      }
    }
    if (!table.values.empty() && values.size() != table.values.front().size()) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": expected " +
                        std::to_string(table.values.front().size()) + " values, got " +
                        std::to_string(values.size()));
    }
    table.methods.push_back(method);
    table.values.push_back(std::move(values));
  }
  if (table.methods.empty()) throw FormatError(path.string() + ": no rows");
  return table;
}

}  // namespace fedopal
