#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedopal {

/// Mean per-class recall over the classes present in `targets`.
double balanced_accuracy(std::span<const std::size_t> predictions,
                         std::span<const std::size_t> targets,
                         std::size_t num_classes);

/// Competition ranks per client column (ties share the smallest rank),
/// averaged over clients. `table[m][k]` is method m's accuracy on client k.
/// With `decimals`, values are compared after rounding to that precision.
std::vector<double> average_rank(const std::vector<std::vector<double>>& table,
                                 std::optional<int> decimals = {});

/// Competition ranks within one column.
std::vector<std::size_t> competition_ranks(std::span<const double> values,
                                           std::optional<int> decimals = {});

/// One evaluated (method, seed, client) cell.
struct AccuracyRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t client = 0;
  double balanced_accuracy = 0.0;
};

struct MethodRow {
  std::string method;
  std::vector<double> mean;  // per client, over seeds
  std::vector<double> std;   // sample std over seeds; 0 for a single seed
  double avg_mean = 0.0;     // over clients
  double avg_std = 0.0;      // over seeds of the per-seed client average
  bool ranked = true;
  std::optional<double> avg_rank;
  std::vector<std::optional<std::size_t>> client_rank;
};

struct MetricsTable {
  std::size_t num_clients = 0;
  std::vector<MethodRow> rows;  // in first-appearance order of the records

  const MethodRow& row(const std::string& method) const;
};

/// Aggregates records; methods named in `unranked` (e.g. Centralized) get no
/// rank and do not affect the others' ranks.
MetricsTable build_metrics_table(const std::vector<AccuracyRecord>& records,
                                 const std::vector<std::string>& unranked = {});

/// Tab-separated: header, one row per (method, client), one "avg" summary
/// row per method. Columns: method, client, mean, std, rank.
void export_results(const MetricsTable& table, const std::filesystem::path& path);
std::string format_results(const MetricsTable& table);
/// Reads a file written by export_results (values at printed precision).
MetricsTable parse_results(const std::filesystem::path& path);

/// Grouped bar chart (one group per client, one bar per class) as SVG.
void plot_class_distribution(const std::vector<std::vector<std::size_t>>& histograms,
                             const std::filesystem::path& path);
std::string render_class_distribution(
    const std::vector<std::vector<std::size_t>>& histograms);

}  // namespace fedopal
