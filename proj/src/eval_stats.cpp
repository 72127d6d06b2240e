#include "attnmamba/eval_stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace attnmamba {

namespace {

void require_same_shape(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + shape_to_string(a.shape()) + " vs target " +
                     shape_to_string(b.shape()));
  }
  if (a.empty()) throw ShapeError(std::string(what) + ": empty tensors");
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument(context + ": not a number '" + s + "'");
  return v;
}

}  // namespace

double mse(const Tensor<double>& prediction, const Tensor<double>& target) {
  require_same_shape(prediction, target, "mse");
  double s = 0;
  for (std::size_t i = 0; i < prediction.numel(); ++i) s += (prediction[i] - target[i]) * (prediction[i] - target[i]);
  return s / static_cast<double>(prediction.numel());
}

double mae(const Tensor<double>& prediction, const Tensor<double>& target) {
  require_same_shape(prediction, target, "mae");
  double s = 0;
  for (std::size_t i = 0; i < prediction.numel(); ++i) s += std::abs(prediction[i] - target[i]);
  return s / static_cast<double>(prediction.numel());
}

MetricsReport with_average_rows(std::vector<MetricRow> rows) {
  MetricsReport report;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricRow*>> groups;
  for (const auto& r : rows) {
    if (r.horizon == "Avg") continue;
    if (!groups.count(r.dataset)) order.push_back(r.dataset);
    groups[r.dataset].push_back(&r);
  }
  for (const auto& name : order) {
    const auto& g = groups[name];
    for (const auto* r : g) report.rows.push_back(*r);
    MetricRow avg{name, "Avg", 0, 0};
    for (const auto* r : g) {
      avg.mse += r->mse;
      avg.mae += r->mae;
    }
    avg.mse /= static_cast<double>(g.size());
    avg.mae /= static_cast<double>(g.size());
    report.rows.push_back(avg);
  }
  return report;
}

std::vector<ResultRecord> parse_results_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::vector<ResultRecord> out;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_cells(line);
    if (!header_seen) {
      header_seen = true;
      const std::vector<std::string> expected{"dataset", "horizon", "model", "mse", "mae"};
      if (cells != expected) throw std::invalid_argument("results CSV header must be dataset,horizon,model,mse,mae");
      continue;
    }
    const std::string where = "results CSV line " + std::to_string(lineno);
    if (cells.size() != 5) throw std::invalid_argument(where + ": expected 5 cells, got " + std::to_string(cells.size()));
    out.push_back({cells[0], cells[1], cells[2], parse_double(cells[3], where), parse_double(cells[4], where)});
  }
  if (out.empty()) throw std::invalid_argument("results CSV has no data rows");
  return out;
}

std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_results_csv(buf.str());
}

ScoreTable build_score_table(const std::vector<ResultRecord>& records, Metric metric) {
  ScoreTable t;
  std::map<std::string, std::size_t> cond_idx, model_idx;
  for (const auto& r : records) {
    const std::string cond = r.dataset + "/" + r.horizon;
    if (cond_idx.emplace(cond, t.conditions.size()).second) t.conditions.push_back(cond);
    if (model_idx.emplace(r.model, t.models.size()).second) t.models.push_back(r.model);
  }
  const double missing = std::nan("");
  t.scores.assign(t.conditions.size(), std::vector<double>(t.models.size(), missing));
  for (const auto& r : records) {
    double& cell = t.scores[cond_idx[r.dataset + "/" + r.horizon]][model_idx[r.model]];
    if (!std::isnan(cell)) throw std::invalid_argument("duplicate result for " + r.model + " on " + r.dataset + "/" + r.horizon);
    cell = metric == Metric::kMse ? r.mse : r.mae;
  }
  for (std::size_t c = 0; c < t.conditions.size(); ++c)
    for (std::size_t m = 0; m < t.models.size(); ++m)
      if (std::isnan(t.scores[c][m])) {
        throw std::invalid_argument("results table is not rectangular: no " + t.models[m] + " result for " +
                                    t.conditions[c]);
      }
  return t;
}

RankingReport posthoc_from_ranks(std::vector<double> average_rank, std::size_t n, std::vector<std::string> models) {
  const std::size_t k = average_rank.size();
  if (k < 2 || n < 1) throw std::invalid_argument("ranking needs k >= 2 models and n >= 1 conditions");
  if (models.empty())
    for (std::size_t i = 0; i < k; ++i) models.push_back("model" + std::to_string(i));
  if (models.size() != k) throw std::invalid_argument("model name count does not match rank count");
  RankingReport r;
  r.models = std::move(models);
  r.average_rank = std::move(average_rank);
  r.n = n;
  r.k = k;
  r.best = static_cast<std::size_t>(std::min_element(r.average_rank.begin(), r.average_rank.end()) - r.average_rank.begin());
  const double kd = static_cast<double>(k), nd = static_cast<double>(n);
  const double se = std::sqrt(kd * (kd + 1.0) / (6.0 * nd));
  for (std::size_t i = 0; i < k; ++i) {
    const double z = (r.average_rank[i] - r.average_rank[r.best]) / se;
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    r.z.push_back(z);
    r.p.push_back(p);
    r.p_bonferroni.push_back(std::min(1.0, p * (kd - 1.0)));
  }
  return r;
}

RankingReport friedman_rank(const std::vector<std::vector<double>>& table, bool lower_is_better,
                            std::vector<std::string> models) {
  if (table.size() < 2) throw std::invalid_argument("friedman_rank needs n >= 2 conditions");
  const std::size_t k = table.front().size();
  if (k < 2) throw std::invalid_argument("friedman_rank needs k >= 2 models");
  std::vector<double> total(k, 0.0);
  for (std::size_t row = 0; row < table.size(); ++row) {
    const auto& scores = table[row];
    if (scores.size() != k) {
      throw std::invalid_argument("table is not rectangular: row " + std::to_string(row) + " has " +
                                  std::to_string(scores.size()) + " entries, expected " + std::to_string(k));
    }
    // 1 + (# strictly better) + (# others tied) / 2.
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t better = 0, ties = 0;
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        if (scores[j] == scores[i]) ++ties;
        else if (lower_is_better ? scores[j] < scores[i] : scores[j] > scores[i]) ++better;
      }
      total[i] += 1.0 + static_cast<double>(better) + static_cast<double>(ties) / 2.0;
    }
  }
  for (auto& t : total) t /= static_cast<double>(table.size());
  return posthoc_from_ranks(std::move(total), table.size(), std::move(models));
}

std::string shortest_decimal(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_ranking_csv(const std::filesystem::path& path, const RankingReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "model,rank,z,p,p_bonferroni\n";
  for (std::size_t i = 0; i < report.k; ++i) {
    out << report.models[i] << ',' << shortest_decimal(report.average_rank[i]) << ',' << shortest_decimal(report.z[i])
        << ',' << shortest_decimal(report.p[i]) << ',' << shortest_decimal(report.p_bonferroni[i]) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_matrix_csv(const std::filesystem::path& path, const double* data, std::size_t rows, std::size_t cols) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << shortest_decimal(data[r * cols + c]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::vector<double>> read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split_cells(line)) row.push_back(parse_double(cell, path.string()));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename T>
void export_attention(const AttentionTrace<T>& trace, const Tensor<T>& att, std::size_t batch_index,
                      const std::filesystem::path& dir) {
  const Tensor<T>& w = trace.weights;
  if (w.rank() != 3 || trace.scores.rank() != 3 || att.shape() != w.shape()) {
    throw ShapeError("export_attention: inconsistent trace shapes");
  }
  if (batch_index >= w.dim(0)) {
    throw std::out_of_range("batch index " + std::to_string(batch_index) + " out of range for batch of " +
                            std::to_string(w.dim(0)));
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  const auto slab = [batch_index](const Tensor<T>& t) {
    const std::size_t rows = t.dim(1), cols = t.dim(2);
    std::vector<double> out(rows * cols);
    const T* base = t.data() + batch_index * rows * cols;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(base[i]);
    return out;
  };
  write_matrix_csv(dir / "weights.csv", slab(w).data(), w.dim(1), w.dim(2));
  write_matrix_csv(dir / "scores.csv", slab(trace.scores).data(), trace.scores.dim(1), trace.scores.dim(2));
  write_matrix_csv(dir / "att.csv", slab(att).data(), att.dim(1), att.dim(2));

  nlohmann::ordered_json manifest;
  manifest["batch_index"] = batch_index;
  manifest["files"] = {{"weights", {{"path", "weights.csv"}, {"shape", w.shape()}}},
                       {"scores", {{"path", "scores.csv"}, {"shape", trace.scores.shape()}}},
                       {"att", {{"path", "att.csv"}, {"shape", att.shape()}}}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

template void export_attention(const AttentionTrace<float>&, const Tensor<float>&, std::size_t,
                               const std::filesystem::path&);
template void export_attention(const AttentionTrace<double>&, const Tensor<double>&, std::size_t,
                               const std::filesystem::path&);

}  // namespace attnmamba
