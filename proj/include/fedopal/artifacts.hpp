#pragma once

// Files produced by an experiment run and the readers used to recompute
// metrics from them.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedopal/federation.hpp"

namespace fedopal {

struct ArtifactPaths {
  std::filesystem::path results;     // results.tsv
  std::filesystem::path accuracies;  // accuracies.jsonl, one line per (method, seed, client)
  std::filesystem::path rounds;      // rounds.jsonl, one line per round
  std::filesystem::path plot;        // class_distribution.svg

  static ArtifactPaths in(const std::filesystem::path& dir);
};

/// Environment variable that overrides the default output directory.
inline constexpr const char* kOutDirEnv = "FEDOPAL_OUT_DIR";

/// An explicit directory wins, then $FEDOPAL_OUT_DIR, then `fallback`.
std::filesystem::path output_dir(const std::optional<std::filesystem::path>& flag,
                                 const std::filesystem::path& fallback);

/// Generates the configured synthetic dataset or loads the configured file.
FederatedDataset resolve_dataset(const ExperimentConfig& config);

std::string round_record_json(const RoundRecord& record);

void write_accuracy_log(const ExperimentResult& result,
                        const std::filesystem::path& path);
std::vector<AccuracyRecord> read_accuracy_log(const std::filesystem::path& path);

/// Runs the experiment, streaming the round log, then writes the accuracy
/// log, the results table and the class-distribution plot into `dir`.
ExperimentResult run_and_export(const ExperimentConfig& config,
                                const FederatedDataset& dataset,
                                const std::filesystem::path& dir,
                                const MessageObserver& on_message = {});

/// Whitespace-separated "method v_1 … v_K" lines; '#' starts a comment.
struct AccuracyTable {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> values;
};
AccuracyTable read_accuracy_table(const std::filesystem::path& path);

}  // namespace fedopal
