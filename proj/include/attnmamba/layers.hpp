#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "attnmamba/autograd.hpp"

namespace attnmamba {

/// Non-owning view of a named parameter, used for enumeration, optimizer
/// updates, and checkpoint I/O.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

/// Affine map along the last axis: x @ weight + bias.
template <typename T>
struct LinearLayer {
  std::string name;
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  LinearLayer() = default;
  LinearLayer(std::string layer_name, std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  // Uniform in [-1/sqrt(in), 1/sqrt(in)] for weight and bias.
  void init_uniform(std::mt19937_64& rng);
  void append_params(ParamList<T>& out);
};

template <typename T>
struct BoundLinear {
  Var<T> weight;
  Var<T> bias;
};

template <typename T>
BoundLinear<T> bind(Graph<T>& g, const LinearLayer<T>& layer);

template <typename T>
Var<T> linear(Var<T> x, const BoundLinear<T>& layer);

/// Reversible instance normalization. gamma/beta are learnable per variate
/// (identity at init); the instance statistics are data and are not
/// differentiated.
template <typename T>
struct RevIn {
  std::string name = "revin";
  Tensor<T> gamma;  // [N]
  Tensor<T> beta;   // [N]
  double eps = 1e-5;

  RevIn() = default;
  explicit RevIn(std::size_t variates, std::string layer_name = "revin");
  void append_params(ParamList<T>& out);
};

template <typename T>
struct RevInState {
  Tensor<T> mu;     // [B, 1, N]
  Tensor<T> sigma;  // [B, 1, N], population std with eps inside the sqrt
  bool ready() const { return !mu.empty(); }
};

template <typename T>
struct BoundRevIn {
  Var<T> gamma;  // bound as [1, 1, N]
  Var<T> beta;
  double eps;
};

template <typename T>
BoundRevIn<T> bind(Graph<T>& g, const RevIn<T>& layer);

// x[B, L, N] -> (x - mu) / sigma * gamma + beta; fills `state`.
template <typename T>
Var<T> revin_normalize(Var<T> x, const BoundRevIn<T>& layer, RevInState<T>& state);

// y[B, T, N] -> (y - beta) / gamma * sigma + mu using the stored statistics.
template <typename T>
Var<T> revin_denormalize(Var<T> y, const BoundRevIn<T>& layer, const RevInState<T>& state);

}  // namespace attnmamba
