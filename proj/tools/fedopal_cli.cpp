// Command-line entry point: dataset generation, base pretraining, experiment
// runs and the metric/plot/gradient utilities.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "fedopal/artifacts.hpp"
#include "fedopal/error.hpp"
#include "fedopal/federation.hpp"
#include "fedopal/gradcheck.hpp"
#include "fedopal/metrics.hpp"

namespace fs = std::filesystem;
using namespace fedopal;

namespace {

// Relative outputs land in the output directory.
fs::path place(const fs::path& dir, const fs::path& file) {
  return file.is_absolute() ? file : dir / file;
}

void add_data_flags(CLI::App& cmd, SyntheticDatasetConfig& c) {
  cmd.add_option("--clients", c.num_clients, "number of clients");
  cmd.add_option("--classes", c.num_classes, "number of classes");
  cmd.add_option("--image-size", c.image_size, "image side in pixels");
  cmd.add_option("--channels", c.channels, "image channels");
  cmd.add_option("--samples", c.samples_per_client, "samples per client")->delimiter(',');
  cmd.add_option("--beta", c.dirichlet_beta, "Dirichlet label-shift concentration");
  cmd.add_option("--shift", c.feature_shift, "feature-shift strength");
  cmd.add_option("--noise", c.noise_sigma, "pixel noise sigma");
  cmd.add_option("--seed", c.seed, "generation seed");
  cmd.add_option("--pattern-seed", c.pattern_seed, "pattern family seed");
  cmd.add_option("--test-fraction", c.test_fraction, "test share of each client");
  cmd.add_option("--val-fraction", c.val_fraction, "validation share of the rest");
}

int cmd_gen_data(const SyntheticDatasetConfig& config, const fs::path& dir,
                 const fs::path& out, const std::optional<fs::path>& plot) {
  const FederatedDataset ds = generate_dataset(config);
  fs::create_directories(dir);
  save_dataset(ds, place(dir, out));
  if (plot) plot_class_distribution(ds.histograms, place(dir, *plot));
  for (std::size_t k = 0; k < ds.clients.size(); ++k) {
    const auto& c = ds.clients[k];
    std::printf("client %zu: train %zu, val %zu, test %zu\n", k, c.train.size(),
                c.val.size(), c.test.size());
  }
  return 0;
}

int cmd_pretrain(const std::optional<fs::path>& config_path, const PretrainConfig& p,
                 std::uint64_t seed, const fs::path& dir, const fs::path& out) {
  ModelConfig mc;
  if (config_path) mc = load_experiment_config(*config_path).model;
  PretrainReport report;
  const VitModel model = pretrain_backbone(mc, p, seed, &report);
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
    std::printf("epoch %zu: loss %.4f\n", e + 1, report.epoch_loss[e]);
  }
  std::printf("pool accuracy %.3f\n", report.train_accuracy);
  fs::create_directories(dir);
  save_base_checkpoint(model, place(dir, out));
  return 0;
}

int cmd_run(const fs::path& config_path, const std::optional<fs::path>& base,
            const fs::path& dir) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (base) config.base_checkpoint = *base;
  const FederatedDataset ds = resolve_dataset(config);
  const ExperimentResult result = run_and_export(config, ds, dir);
  std::cout << format_results(result.table);
  return 0;
}

int cmd_eval(const fs::path& log, const std::optional<fs::path>& out, const fs::path& dir) {
  const auto records = read_accuracy_log(log);
  const MetricsTable table =
      build_metrics_table(records, {method_name(Method::centralized)});
  if (out) {
    fs::create_directories(dir);
    export_results(table, place(dir, *out));
  }
  std::cout << format_results(table);
  return 0;
}

int cmd_rank(const fs::path& table_path, int decimals) {
  const AccuracyTable table = read_accuracy_table(table_path);
  const auto ranks = average_rank(table.values, decimals);
  for (std::size_t m = 0; m < ranks.size(); ++m) {
    std::printf("%s\t%.2f\n", table.methods[m].c_str(), ranks[m]);
  }
  return 0;
}

int cmd_gradcheck(double step, double tolerance, std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& c : run_gradcheck_suite(step, seed)) {
    std::printf("%-34s %4zu coords  max rel err %.3e%s\n", c.name.c_str(), c.coordinates,
                c.max_rel_error, c.max_rel_error < tolerance ? "" : "  FAIL");
    worst = std::max(worst, c.max_rel_error);
  }
  std::printf("max relative error %.3e (tolerance %.0e)\n", worst, tolerance);
  return worst < tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated dual-adapter fine-tuning simulator"};
  app.require_subcommand(1);
  std::optional<fs::path> out_dir;
  app.add_option("--out-dir", out_dir, "output directory (default: $FEDOPAL_OUT_DIR or .)");

  SyntheticDatasetConfig data;
  fs::path data_out = "dataset.bin";
  std::optional<fs::path> data_plot;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic federated dataset");
  add_data_flags(*gen, data);
  gen->add_option("-o,--output", data_out, "dataset file");
  gen->add_option("--plot", data_plot, "also write the class-distribution SVG");

  PretrainConfig pre;
  std::uint64_t pre_seed = 0;
  std::optional<fs::path> pre_config;
  fs::path pre_out = "base.bin";
  auto* pretrain = app.add_subcommand("pretrain-base", "train and save a frozen backbone");
  pretrain->add_option("--config", pre_config, "experiment config supplying the model shape")
      ->check(CLI::ExistingFile);
  pretrain->add_option("--epochs", pre.epochs);
  pretrain->add_option("--lr", pre.lr);
  pretrain->add_option("--momentum", pre.momentum);
  pretrain->add_option("--batch-size", pre.batch_size);
  pretrain->add_option("--pool-classes", pre.pool_classes);
  pretrain->add_option("--per-class", pre.per_class);
  pretrain->add_option("--pattern-seed", pre.pattern_seed);
  pretrain->add_option("--noise", pre.noise_sigma);
  pretrain->add_option("--seed", pre_seed);
  pretrain->add_option("-o,--output", pre_out, "checkpoint file");

  fs::path run_config;
  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  std::optional<fs::path> run_base;
  run->add_option("config", run_config, "experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--base", run_base, "base checkpoint, overriding the config")
      ->check(CLI::ExistingFile);

  fs::path eval_log;
  std::optional<fs::path> eval_out;
  auto* eval = app.add_subcommand("eval", "recompute the results table from an accuracy log");
  eval->add_option("log", eval_log, "accuracies.jsonl")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--output", eval_out, "write the table to this file");

  fs::path rank_table;
  int rank_decimals = 3;
  auto* rank = app.add_subcommand("rank", "average competition rank from an accuracy table");
  rank->add_option("table", rank_table, "lines of: method acc_1 ... acc_K")
      ->required()
      ->check(CLI::ExistingFile);
  rank->add_option("--decimals", rank_decimals, "compare at this precision");

  fs::path plot_dataset;
  fs::path plot_out = "class_distribution.svg";
  auto* plot = app.add_subcommand("plot", "class-distribution chart of a dataset");
  plot->add_option("dataset", plot_dataset, "dataset file")->required()->check(CLI::ExistingFile);
  plot->add_option("-o,--output", plot_out, "SVG file");

  double gc_step = 1e-5;
  double gc_tol = 1e-5;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gradcheck->add_option("--step", gc_step);
  gradcheck->add_option("--tolerance", gc_tol);
  gradcheck->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(data, output_dir(out_dir, "."), data_out, data_plot);
    if (*pretrain) return cmd_pretrain(pre_config, pre, pre_seed, output_dir(out_dir, "."), pre_out);
    if (*run) return cmd_run(run_config, run_base, output_dir(out_dir, "results"));
    if (*eval) return cmd_eval(eval_log, eval_out, output_dir(out_dir, "."));
    if (*rank) return cmd_rank(rank_table, rank_decimals);
    if (*plot) {
      const fs::path dir = output_dir(out_dir, ".");
      fs::create_directories(dir);
      plot_class_distribution(load_dataset(plot_dataset).histograms, place(dir, plot_out));
      return 0;
    }
    if (*gradcheck) return cmd_gradcheck(gc_step, gc_tol, gc_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
