#include "attnmamba/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

namespace attnmamba {

namespace {

template <typename T>
const Tensor<T>& grad_for(const Gradients<T>& grads, const ParamRef<T>& p) {
  auto it = grads.find(p.name);
  if (it == grads.end()) throw std::invalid_argument("no gradient for parameter '" + p.name + "'");
  // Bound views (e.g. RevIN's [1, 1, N]) may differ in shape but not in size.
  if (it->second.numel() != p.tensor->numel()) {
    throw ShapeError("gradient for '" + p.name + "' has " + std::to_string(it->second.numel()) +
                     " elements, parameter has " + std::to_string(p.tensor->numel()));
  }
  return it->second;
}

template <typename T>
std::vector<Tensor<T>> snapshot(const ParamList<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(*p.tensor);
  return out;
}

template <typename T>
void restore(const ParamList<T>& params, const std::vector<Tensor<T>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = saved[i];
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

template <typename T>
void adam_step(const ParamList<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
  for (const auto& p : params) {
    if (!grad_for(grads, p).all_finite()) throw NonFiniteGradientError(p.name);
  }
  const AdamOptions& o = state.options;
  const std::uint64_t t = ++state.step_count;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
  for (const auto& p : params) {
    const Tensor<T>& g = grad_for(grads, p);
    auto [mit, m_new] = state.m.try_emplace(p.name, p.tensor->shape());
    auto [vit, v_new] = state.v.try_emplace(p.name, p.tensor->shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    Tensor<T>& theta = *p.tensor;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double gi = g[i];
      const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / c1, v_hat = vi / c2;
      theta[i] = static_cast<T>(theta[i] - o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
}

template <typename T>
double clip_global_norm(Gradients<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads)
      for (T& v : g.values()) v = static_cast<T>(v * factor);
  }
  return norm;
}

template <typename T>
WindowMetrics evaluate_windows(const AttentionMambaModel<T>& model, const Tensor<double>& values,
                               const WindowIndex& windows, std::size_t batch_size) {
  WindowMetrics out;
  if (windows.size() == 0) {
    out.mse = out.mae = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double se = 0, ae = 0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    std::vector<std::size_t> picks;
    for (std::size_t i = begin; i < std::min(windows.size(), begin + batch_size); ++i) picks.push_back(i);
    Batch<T> b = gather_batch<T>(values, windows, picks);
    Tensor<T> pred = predict(model, b.x);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(b.y[i]);
      se += d * d;
      ae += std::abs(d);
    }
    count += pred.numel();
  }
  out.mse = se / static_cast<double>(count);
  out.mae = ae / static_cast<double>(count);
  out.windows = windows.size();
  return out;
}

WindowMetrics persistence_metrics(const Tensor<double>& values, const WindowIndex& windows) {
  WindowMetrics out;
  if (windows.size() == 0) {
    out.mse = out.mae = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const std::size_t n = values.dim(1), l = windows.lookback, h = windows.horizon;
  double se = 0, ae = 0;
  for (std::size_t start : windows.starts) {
    const double* last = values.data() + (start + l - 1) * n;
    for (std::size_t t = 0; t < h; ++t)
      for (std::size_t c = 0; c < n; ++c) {
        const double d = last[c] - values[(start + l + t) * n + c];
        se += d * d;
        ae += std::abs(d);
      }
  }
  const double count = static_cast<double>(windows.size() * h * n);
  out.mse = se / count;
  out.mae = ae / count;
  out.windows = windows.size();
  return out;
}

template <typename T>
TrainResult train(AttentionMambaModel<T>& model, const SplitDataset& data, const TrainRunConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(cfg.lr >= 0)) throw std::invalid_argument("learning rate must be >= 0");
  TrainResult result;
  if (cfg.epochs == 0) return result;
  const WindowIndex& windows = data.train_windows;
  if (windows.size() == 0) throw std::invalid_argument("training split has no windows");

  ParamList<T> params = model.parameters();
  AdamState<T> adam;
  adam.options.lr = cfg.lr;
  std::vector<Tensor<T>> best = snapshot(params);
  result.best_val_mse = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  const auto diverge = [&](std::size_t epoch, const std::string& why) {
    restore(params, best);
    throw DivergenceError(epoch, "training diverged in epoch " + std::to_string(epoch) + ": " + why);
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(windows.size(), cfg.seed + 0x9E3779B97F4A7C15ull * epoch);
    double loss_sum = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::vector<std::size_t> picks(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + cfg.batch_size)));
      Batch<T> b = gather_batch<T>(data.values, windows, picks);
      Graph<T> g;
      Var<T> loss;
      try {
        loss = mse_loss(forward(g, model, g.constant(std::move(b.x))).prediction, g.constant(std::move(b.y)));
      } catch (const std::invalid_argument& e) {
        // After an update this means the parameters left the valid domain
        // (e.g. the step size underflowed to zero); before one it is a real error.
        if (adam.step_count == 0) throw;
        diverge(epoch, e.what());
      }
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) diverge(epoch, "non-finite loss");
      Gradients<T> grads = g.backward(loss);
      if (cfg.clip_norm > 0) clip_global_norm(grads, cfg.clip_norm);
      try {
        adam_step(params, grads, adam);
      } catch (const NonFiniteGradientError& e) {
        diverge(epoch, e.what());
      }
      loss_sum += lv * static_cast<double>(picks.size());
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(windows.size()), 0.0};
    rec.val_mse = evaluate_windows(model, data.values, data.val_windows).mse;
    if (!std::isfinite(rec.train_mse)) diverge(epoch, "non-finite epoch loss");
    result.curve.push_back(rec);
    spdlog::debug("epoch {}: train_mse={} val_mse={}", epoch, rec.train_mse, rec.val_mse);

    // Without validation windows the train loss drives model selection.
    const double criterion = std::isfinite(rec.val_mse) ? rec.val_mse : rec.train_mse;
    if (criterion < result.best_val_mse) {
      result.best_val_mse = criterion;
      result.best_epoch = epoch;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      result.early_stopped = true;
      break;
    }
    if (cfg.target_train_mse && rec.train_mse < *cfg.target_train_mse) {
      result.reached_target = true;
      break;
    }
  }
  restore(params, best);
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<EpochRecord>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "epoch,train_mse,val_mse\n";
  for (const auto& r : curve) out << r.epoch << ',' << format_double(r.train_mse) << ',' << format_double(r.val_mse) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

#define ATTNMAMBA_INSTANTIATE_TRAINING(T)                                                            \
  template void adam_step(const ParamList<T>&, const Gradients<T>&, AdamState<T>&);                 \
  template double clip_global_norm(Gradients<T>&, double);                                          \
  template WindowMetrics evaluate_windows(const AttentionMambaModel<T>&, const Tensor<double>&,     \
                                          const WindowIndex&, std::size_t);                         \
  template TrainResult train(AttentionMambaModel<T>&, const SplitDataset&, const TrainRunConfig&);

ATTNMAMBA_INSTANTIATE_TRAINING(float)
ATTNMAMBA_INSTANTIATE_TRAINING(double)

#undef ATTNMAMBA_INSTANTIATE_TRAINING

}  // namespace attnmamba
