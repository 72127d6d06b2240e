#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "attnmamba/pooled_attention.hpp"

namespace attnmamba {

double mse(const Tensor<double>& prediction, const Tensor<double>& target);
double mae(const Tensor<double>& prediction, const Tensor<double>& target);

struct MetricRow {
  std::string dataset;
  std::string horizon;  // forecast length, or "Avg"
  double mse = 0;
  double mae = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
};

// Appends one "Avg" row per dataset holding the arithmetic mean of its rows.
MetricsReport with_average_rows(std::vector<MetricRow> rows);

// One row of the (dataset, horizon, model, mse, mae) results format.
struct ResultRecord {
  std::string dataset;
  std::string horizon;
  std::string model;
  double mse = 0;
  double mae = 0;
};

std::vector<ResultRecord> parse_results_csv(const std::string& text);
std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path);

// Conditions (dataset, horizon) x models, both in first-appearance order.
struct ScoreTable {
  std::vector<std::string> conditions;
  std::vector<std::string> models;
  std::vector<std::vector<double>> scores;  // [condition][model]
};

enum class Metric { kMse, kMae };

// Throws std::invalid_argument if any (condition, model) cell is missing or
// duplicated.
ScoreTable build_score_table(const std::vector<ResultRecord>& records, Metric metric);

struct RankingReport {
  std::vector<std::string> models;
  std::vector<double> average_rank;
  std::vector<double> z;
  std::vector<double> p;
  std::vector<double> p_bonferroni;
  std::size_t n = 0;  // conditions
  std::size_t k = 0;  // models
  std::size_t best = 0;
};

// Friedman average ranks (ties share the mean rank) with a one-vs-best
// post-hoc: z = (R_i - R_best) / sqrt(k (k + 1) / (6 n)), two-sided normal p,
// Bonferroni over k - 1 comparisons.
RankingReport friedman_rank(const std::vector<std::vector<double>>& table, bool lower_is_better = true,
                            std::vector<std::string> models = {});
// Post-hoc statistics from already-averaged ranks.
RankingReport posthoc_from_ranks(std::vector<double> average_rank, std::size_t n, std::vector<std::string> models = {});

void write_ranking_csv(const std::filesystem::path& path, const RankingReport& report);

// Shortest decimal that parses back to the same double.
std::string shortest_decimal(double v);

void write_matrix_csv(const std::filesystem::path& path, const double* data, std::size_t rows, std::size_t cols);
std::vector<std::vector<double>> read_matrix_csv(const std::filesystem::path& path);

// Writes weights.csv, scores.csv and att.csv for one batch element plus a
// manifest.json with the full shapes and the batch index.
template <typename T>
void export_attention(const AttentionTrace<T>& trace, const Tensor<T>& att, std::size_t batch_index,
                      const std::filesystem::path& dir);

}  // namespace attnmamba
