#include "fedopal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fedopal/error.hpp"

namespace fedopal {
namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  return xs.empty() ? 0.0 : m / static_cast<double>(xs.size());
}

const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                          "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
                          "#9c755f", "#bab0ac"};

}  // namespace

double balanced_accuracy(std::span<const std::size_t> predictions,
                         std::span<const std::size_t> targets,
                         std::size_t num_classes) {
  if (targets.empty()) throw ContractError("balanced_accuracy: empty input");
  if (predictions.size() != targets.size()) {
    throw ContractError("balanced_accuracy: " +
                        std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(targets.size()) + " targets");
  }
  std::vector<std::size_t> total(num_classes, 0);
  std::vector<std::size_t> correct(num_classes, 0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= num_classes || predictions[i] >= num_classes) {
      throw IndexError("balanced_accuracy: class index outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    ++total[targets[i]];
    if (predictions[i] == targets[i]) ++correct[targets[i]];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) continue;
    sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return sum / static_cast<double>(present);
}

std::vector<std::size_t> competition_ranks(std::span<const double> values,
                                           std::optional<int> decimals) {
  std::vector<double> keys(values.begin(), values.end());
  if (decimals) {
    const double scale = std::pow(10.0, *decimals);
    for (auto& k : keys) k = std::round(k * scale);
  }
  std::vector<std::size_t> ranks(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::size_t better = 0;
    for (double other : keys) better += other > keys[i] ? 1 : 0;
    ranks[i] = better + 1;
  }
  return ranks;
}

std::vector<double> average_rank(const std::vector<std::vector<double>>& table,
                                 std::optional<int> decimals) {
  if (table.empty()) throw ContractError("average_rank: no methods");
  const std::size_t clients = table.front().size();
  if (clients == 0) throw ContractError("average_rank: no clients");
  for (const auto& row : table) {
    if (row.size() != clients) {
      throw ContractError("average_rank: incomplete table");
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw ContractError("average_rank: missing value");
    }
  }
  std::vector<double> sums(table.size(), 0.0);
  std::vector<double> column(table.size());
  for (std::size_t k = 0; k < clients; ++k) {
    for (std::size_t m = 0; m < table.size(); ++m) column[m] = table[m][k];
    const auto ranks = competition_ranks(column, decimals);
    for (std::size_t m = 0; m < table.size(); ++m)
      sums[m] += static_cast<double>(ranks[m]);
  }
  for (auto& s : sums) s /= static_cast<double>(clients);
  return sums;
}

const MethodRow& MetricsTable::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw ContractError("metrics table has no method " + method);
}

MetricsTable build_metrics_table(const std::vector<AccuracyRecord>& records,
                                 const std::vector<std::string>& unranked) {
  if (records.empty()) throw ContractError("no accuracy records");
  std::vector<std::string> order;
  // method → seed → client → accuracy
  std::map<std::string, std::map<std::uint64_t, std::map<std::size_t, double>>>
      cells;
  std::size_t clients = 0;
  for (const auto& r : records) {
    if (!cells.count(r.method)) order.push_back(r.method);
    cells[r.method][r.seed][r.client] = r.balanced_accuracy;
    clients = std::max(clients, r.client + 1);
  }
  MetricsTable table;
  table.num_clients = clients;
  for (const auto& name : order) {
    const auto& by_seed = cells.at(name);
    MethodRow row;
    row.method = name;
    row.ranked =
        std::find(unranked.begin(), unranked.end(), name) == unranked.end();
    std::vector<double> seed_avgs;
    std::vector<std::vector<double>> per_client(clients);
    for (const auto& [seed, by_client] : by_seed) {
      if (by_client.size() != clients) {
        throw ContractError("method " + name + " lacks results for some clients");
      }
      std::vector<double> vals;
      for (const auto& [client, acc] : by_client) {
        per_client[client].push_back(acc);
        vals.push_back(acc);
      }
      seed_avgs.push_back(mean_of(vals));
    }
    for (const auto& xs : per_client) {
      row.mean.push_back(mean_of(xs));
      row.std.push_back(sample_std(xs));
    }
    row.avg_mean = mean_of(row.mean);
    row.avg_std = sample_std(seed_avgs);
    row.client_rank.assign(clients, std::nullopt);
    table.rows.push_back(std::move(row));
  }
  std::vector<std::vector<double>> ranked_means;
  std::vector<MethodRow*> ranked_rows;
  for (auto& r : table.rows) {
    if (!r.ranked) continue;
    ranked_means.push_back(r.mean);
    ranked_rows.push_back(&r);
  }
  if (!ranked_rows.empty()) {
    const auto avg = average_rank(ranked_means);
    std::vector<double> column(ranked_rows.size());
    for (std::size_t k = 0; k < clients; ++k) {
      for (std::size_t m = 0; m < ranked_rows.size(); ++m)
        column[m] = ranked_rows[m]->mean[k];
      const auto ranks = competition_ranks(column);
      for (std::size_t m = 0; m < ranked_rows.size(); ++m)
        ranked_rows[m]->client_rank[k] = ranks[m];
    }
    for (std::size_t m = 0; m < ranked_rows.size(); ++m)
      ranked_rows[m]->avg_rank = avg[m];
  }
  return table;
}

std::string format_results(const MetricsTable& table) {
  std::ostringstream os;
  os << "method\tclient\tmean\tstd\trank\n";
  for (const auto& r : table.rows) {
    double printed_sum = 0.0;
    for (std::size_t k = 0; k < table.num_clients; ++k) {
      const std::string m = fixed(r.mean[k], 3);
      printed_sum += std::stod(m);
      os << r.method << '\t' << (k + 1) << '\t' << m << '\t'
         << fixed(r.std[k], 3) << '\t'
         << (r.client_rank[k] ? std::to_string(*r.client_rank[k]) : "n/a")
         << '\n';
    }
    // The summary mean is taken over the printed client means so the file is
    // self-consistent at its own precision.
    os << r.method << "\tavg\t"
       << fixed(printed_sum / static_cast<double>(table.num_clients), 3) << '\t'
       << fixed(r.avg_std, 3) << '\t'
       << (r.avg_rank ? fixed(*r.avg_rank, 2) : "n/a") << '\n';
  }
  return os.str();
}

void export_results(const MetricsTable& table,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_results(table);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

MetricsTable parse_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "method\tclient\tmean\tstd\trank") {
    throw FormatError(path.string() + ": missing results header");
  }
  MetricsTable table;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 5) {
      throw FormatError(path.string() + ": expected 5 columns in '" + line + "'");
    }
    if (!index.count(f[0])) {
      index[f[0]] = table.rows.size();
      table.rows.push_back(MethodRow{});
      table.rows.back().method = f[0];
    }
    MethodRow& r = table.rows[index[f[0]]];
    try {
      if (f[1] == "avg") {
        r.avg_mean = std::stod(f[2]);
        r.avg_std = std::stod(f[3]);
        r.ranked = f[4] != "n/a";
        if (r.ranked) r.avg_rank = std::stod(f[4]);
      } else {
        r.mean.push_back(std::stod(f[2]));
        r.std.push_back(std::stod(f[3]));
        r.client_rank.push_back(
            f[4] == "n/a" ? std::nullopt
                          : std::optional<std::size_t>(std::stoul(f[4])));
      }
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad number in '" + line + "'");
    }
  }
  for (const auto& r : table.rows) {
    if (table.num_clients == 0) table.num_clients = r.mean.size();
    if (r.mean.size() != table.num_clients) {
      throw FormatError(path.string() + ": ragged client rows");
    }
  }
  return table;
}

std::string render_class_distribution(
    const std::vector<std::vector<std::size_t>>& histograms) {
  const std::size_t clients = histograms.size();
  std::size_t classes = 0;
  std::size_t max_count = 0;
  for (const auto& h : histograms) {
    classes = std::max(classes, h.size());
    for (auto n : h) max_count = std::max(max_count, n);
  }
  const double bar_w = 14.0;
  const double gap = 18.0;
  const double left = 50.0;
  const double top = 30.0;
  const double plot_h = 240.0;
  const double group_w = static_cast<double>(classes) * bar_w + gap;
  const double width = left + static_cast<double>(clients) * group_w + 120.0;
  const double height = top + plot_h + 60.0;
  const double unit = max_count > 0 ? plot_h / static_cast<double>(max_count) : 0.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 1)
     << "\" height=\"" << fixed(height, 1) << "\" data-unit=\"" << fixed(unit, 6)
     << "\">\n";
  os << "<text x=\"" << fixed(left, 1)
     << "\" y=\"18\" font-size=\"13\">Client class distribution</text>\n";
  os << "<line x1=\"" << fixed(left - 4, 1) << "\" y1=\"" << fixed(top + plot_h, 1)
     << "\" x2=\"" << fixed(width - 110.0, 1) << "\" y2=\""
     << fixed(top + plot_h, 1) << "\" stroke=\"black\"/>\n";
  for (std::size_t k = 0; k < clients; ++k) {
    const double gx = left + static_cast<double>(k) * group_w;
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t n = c < histograms[k].size() ? histograms[k][c] : 0;
      const double h = static_cast<double>(n) * unit;
      const double x = gx + static_cast<double>(c) * bar_w;
      const double y = top + plot_h - h;
      os << "<rect class=\"bar\" data-client=\"" << k << "\" data-class=\"" << c
         << "\" data-count=\"" << n << "\" x=\"" << fixed(x, 3) << "\" y=\""
         << fixed(y, 3) << "\" width=\"" << fixed(bar_w - 2.0, 3)
         << "\" height=\"" << fixed(h, 3) << "\" fill=\""
         << kPalette[c % std::size(kPalette)] << "\"/>\n";
      os << "<text x=\"" << fixed(x + (bar_w - 2.0) / 2.0, 3) << "\" y=\""
         << fixed(y - 3.0, 3) << "\" font-size=\"8\" text-anchor=\"middle\">"
         << n << "</text>\n";
    }
    os << "<text x=\"" << fixed(gx + static_cast<double>(classes) * bar_w / 2.0, 3)
       << "\" y=\"" << fixed(top + plot_h + 18.0, 1)
       << "\" font-size=\"11\" text-anchor=\"middle\">Client " << (k + 1)
       << "</text>\n";
  }
  for (std::size_t c = 0; c < classes; ++c) {
    const double ly = top + 12.0 * static_cast<double>(c);
    os << "<rect x=\"" << fixed(width - 100.0, 1) << "\" y=\"" << fixed(ly, 1)
       << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[c % std::size(kPalette)] << "\"/>\n";
    os << "<text x=\"" << fixed(width - 86.0, 1) << "\" y=\""
       << fixed(ly + 9.0, 1) << "\" font-size=\"10\">class " << c << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void plot_class_distribution(
    const std::vector<std::vector<std::size_t>>& histograms,
    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << render_class_distribution(histograms);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fedopal
