#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnmamba/data.hpp"
#include "attnmamba/model.hpp"

namespace attnmamba {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::map<std::string, Tensor<T>> m;  // first moments, keyed by parameter name
  std::map<std::string, Tensor<T>> v;  // second moments
  std::uint64_t step_count = 0;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(const std::string& param)
      : std::runtime_error("non-finite gradient for parameter '" + param + "'"), param_(param) {}
  const std::string& parameter() const noexcept { return param_; }

 private:
  std::string param_;
};

// Bias-corrected Adam update. All gradients are checked before any
// parameter moves, so a non-finite gradient leaves params and state intact.
template <typename T>
void adam_step(const ParamList<T>& params, const Gradients<T>& grads, AdamState<T>& state);

// Rescales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_global_norm(Gradients<T>& grads, double max_norm);

struct TrainRunConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 2024;
  double lr = 1e-3;
  std::size_t patience = 10;
  double clip_norm = 5.0;  // <= 0 disables clipping
  // Stop once an epoch's mean train MSE falls below this value.
  std::optional<double> target_train_mse;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0;
  double val_mse = 0;  // NaN when the validation split has no windows
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_mse = 0;
  bool early_stopped = false;
  bool reached_target = false;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what) : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Mini-batch Adam on MSE over the train windows. Keeps the parameters of the
// best validation epoch. On a non-finite loss or gradient the model is reset
// to its last good parameters and DivergenceError is thrown.
template <typename T>
TrainResult train(AttentionMambaModel<T>& model, const SplitDataset& data, const TrainRunConfig& cfg);

struct WindowMetrics {
  double mse = 0;
  double mae = 0;
  std::size_t windows = 0;
};

// Metrics of the model over a window set, in the space of `values`.
template <typename T>
WindowMetrics evaluate_windows(const AttentionMambaModel<T>& model, const Tensor<double>& values,
                               const WindowIndex& windows, std::size_t batch_size = 64);

// Repeats each window's last lookback row across the horizon.
WindowMetrics persistence_metrics(const Tensor<double>& values, const WindowIndex& windows);

void write_loss_curve(const std::filesystem::path& path, const std::vector<EpochRecord>& curve);

}  // namespace attnmamba
