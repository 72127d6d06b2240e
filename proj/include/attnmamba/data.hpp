#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnmamba/tensor.hpp"

namespace attnmamba {

/// Multivariate series, one row per timestep.
struct RawSeries {
  Tensor<double> values;           // [timesteps, N]
  std::vector<std::string> names;  // N entries
  std::string granularity;         // informational only

  std::size_t timesteps() const { return values.empty() ? 0 : values.dim(0); }
  std::size_t variates() const { return values.empty() ? 0 : values.dim(1); }
};

enum class CsvErrorKind { kIo, kEmptyFile, kRaggedRow, kNonNumericCell };

class CsvError : public std::runtime_error {
 public:
  CsvError(CsvErrorKind kind, std::size_t line, const std::string& what)
      : std::runtime_error(what), kind_(kind), line_(line) {}
  CsvErrorKind kind() const noexcept { return kind_; }
  std::size_t line() const noexcept { return line_; }  // 1-based, 0 if not applicable

 private:
  CsvErrorKind kind_;
  std::size_t line_;
};

struct CsvSchema {
  char delimiter = ',';
  // Unset means auto-detect: a header if the first row has a non-numeric
  // value column, a timestamp if the first data row's first cell is non-numeric.
  std::optional<bool> header;
  std::optional<bool> timestamp;
};

RawSeries parse_csv(const std::string& text, const CsvSchema& schema = {});
RawSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
// Writes a header row and shortest round-trip decimals.
void write_csv(const std::filesystem::path& path, const RawSeries& series);

/// Half-open timestep range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end > begin ? end - begin : 0; }
};

struct WindowSample {
  Tensor<double> x;  // [L, N]
  Tensor<double> y;  // [T, N], immediately after x
};

/// Stride-1 windows over a range, stored as start offsets.
struct WindowIndex {
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::vector<std::size_t> starts;
  std::size_t size() const { return starts.size(); }
};

// R - L - T + 1 windows over a range of length R (none when R < L + T,
// which is logged rather than thrown).
WindowIndex make_windows(std::size_t lookback, std::size_t horizon, IndexRange range);
WindowSample window_at(const Tensor<double>& values, const WindowIndex& index, std::size_t i);

template <typename T>
struct Batch {
  Tensor<T> x;  // [B, L, N]
  Tensor<T> y;  // [B, T, N]
};

template <typename T>
Batch<T> gather_batch(const Tensor<double>& values, const WindowIndex& index, const std::vector<std::size_t>& picks);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// 6:2:2 for names containing "pems" (case-insensitive), 7:1:2 otherwise.
SplitRatios default_ratios(const std::string& dataset_name);

struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  Tensor<double> transform(const Tensor<double>& x) const;  // last axis = variates
  Tensor<double> inverse(const Tensor<double>& x) const;
};

// Population mean/std per variate over the given rows. Near-zero spread
// falls back to a unit divisor with a warning.
Scaler fit_scaler(const Tensor<double>& values, IndexRange rows);

struct SplitDataset {
  Tensor<double> values;  // scaled once fit_apply_scaler has run
  IndexRange train, val, test;
  WindowIndex train_windows, val_windows, test_windows;
  std::optional<Scaler> scaler;
};

// Chronological split. A window belongs to the split holding its last target
// timestep; its lookback may reach back into the previous split.
SplitDataset split_dataset(const RawSeries& series, const SplitRatios& ratios, std::size_t lookback,
                           std::size_t horizon);
SplitDataset fit_apply_scaler(SplitDataset ds);

struct SyntheticConfig {
  std::size_t n_variates = 8;
  std::size_t timesteps = 2000;
  std::vector<double> frequencies{1.0 / 24, 1.0 / 96};  // cycles per timestep
  double noise_std = 0.05;
  std::uint64_t seed = 2024;
};

SyntheticConfig parse_synthetic_config(const std::string& json_text);
// Sum of sinusoids per variate with seeded amplitudes and phases, plus
// Gaussian noise.
RawSeries generate_synthetic(const SyntheticConfig& cfg);

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace attnmamba
