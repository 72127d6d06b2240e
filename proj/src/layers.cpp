#include "attnmamba/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace attnmamba {

template <typename T>
LinearLayer<T>::LinearLayer(std::string layer_name, std::size_t in, std::size_t out)
    : name(std::move(layer_name)), weight(Shape{in, out}), bias(Shape{out}) {}

template <typename T>
void LinearLayer<T>::init_uniform(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : weight.values()) w = static_cast<T>(dist(rng));
  for (auto& b : bias.values()) b = static_cast<T>(dist(rng));
}

template <typename T>
void LinearLayer<T>::append_params(ParamList<T>& out) {
  out.push_back({name + ".weight", &weight});
  out.push_back({name + ".bias", &bias});
}

template <typename T>
BoundLinear<T> bind(Graph<T>& g, const LinearLayer<T>& layer) {
  return {g.parameter(layer.name + ".weight", layer.weight), g.parameter(layer.name + ".bias", layer.bias)};
}

template <typename T>
Var<T> linear(Var<T> x, const BoundLinear<T>& layer) {
  return linear(x, layer.weight, layer.bias);
}

template <typename T>
RevIn<T>::RevIn(std::size_t variates, std::string layer_name)
    : name(std::move(layer_name)), gamma(Shape{variates}, T(1)), beta(Shape{variates}, T(0)) {}

template <typename T>
void RevIn<T>::append_params(ParamList<T>& out) {
  out.push_back({name + ".gamma", &gamma});
  out.push_back({name + ".beta", &beta});
}

template <typename T>
BoundRevIn<T> bind(Graph<T>& g, const RevIn<T>& layer) {
  const std::size_t n = layer.gamma.numel();
  return {g.parameter(layer.name + ".gamma", layer.gamma.reshaped({1, 1, n})),
          g.parameter(layer.name + ".beta", layer.beta.reshaped({1, 1, n})), layer.eps};
}

template <typename T>
Var<T> revin_normalize(Var<T> x, const BoundRevIn<T>& layer, RevInState<T>& state) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("revin_normalize expects [B, L, N], got " + shape_to_string(xv.shape()));
  const std::size_t batch = xv.dim(0), len = xv.dim(1), vars = xv.dim(2);
  if (len < 2) throw std::invalid_argument("revin_normalize needs a lookback of at least 2 steps");
  if (layer.gamma.shape() != Shape{1, 1, vars}) {
    throw ShapeError("revin affine has shape " + shape_to_string(layer.gamma.shape()) + " for " +
                     std::to_string(vars) + " variates");
  }

  Tensor<T> mu(Shape{batch, 1, vars});
  Tensor<T> sigma(Shape{batch, 1, vars});
  Tensor<T> inv_sigma(Shape{batch, 1, vars});
  Tensor<T> neg_mu(Shape{batch, 1, vars});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < vars; ++n) {
      double m = 0;
      for (std::size_t t = 0; t < len; ++t) m += xv[(b * len + t) * vars + n];
      m /= static_cast<double>(len);
      double var = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const double d = xv[(b * len + t) * vars + n] - m;
        var += d * d;
      }
      var /= static_cast<double>(len);
      const double s = std::sqrt(var + layer.eps);
      mu[b * vars + n] = static_cast<T>(m);
      sigma[b * vars + n] = static_cast<T>(s);
      neg_mu[b * vars + n] = static_cast<T>(-m);
      inv_sigma[b * vars + n] = static_cast<T>(1.0 / s);
    }
  state.mu = mu;
  state.sigma = sigma;

  Graph<T>& g = *x.graph;
  Var<T> centered = add_bcast(x, g.constant(std::move(neg_mu)));
  Var<T> scaled = mul_bcast(centered, g.constant(std::move(inv_sigma)));
  return add_bcast(mul_bcast(scaled, layer.gamma), layer.beta);
}

template <typename T>
Var<T> revin_denormalize(Var<T> y, const BoundRevIn<T>& layer, const RevInState<T>& state) {
  if (!state.ready()) throw std::logic_error("revin_denormalize called without normalization statistics");
  const Tensor<T>& yv = y.value();
  if (yv.rank() != 3 || yv.dim(0) != state.mu.dim(0) || yv.dim(2) != state.mu.dim(2)) {
    throw ShapeError("revin_denormalize: input " + shape_to_string(yv.shape()) + " does not match stats " +
                     shape_to_string(state.mu.shape()));
  }
  Graph<T>& g = *y.graph;
  Var<T> unshifted = add_bcast(y, scale(layer.beta, T(-1)));
  Var<T> unscaled = mul_bcast(unshifted, reciprocal(layer.gamma));
  Var<T> restored = mul_bcast(unscaled, g.constant(state.sigma));
  return add_bcast(restored, g.constant(state.mu));
}

#define ATTNMAMBA_INSTANTIATE_LAYERS(T)                                                    \
  template struct LinearLayer<T>;                                                         \
  template struct RevIn<T>;                                                               \
  template BoundLinear<T> bind(Graph<T>&, const LinearLayer<T>&);                         \
  template Var<T> linear(Var<T>, const BoundLinear<T>&);                                  \
  template BoundRevIn<T> bind(Graph<T>&, const RevIn<T>&);                                \
  template Var<T> revin_normalize(Var<T>, const BoundRevIn<T>&, RevInState<T>&);          \
  template Var<T> revin_denormalize(Var<T>, const BoundRevIn<T>&, const RevInState<T>&);

ATTNMAMBA_INSTANTIATE_LAYERS(float)
ATTNMAMBA_INSTANTIATE_LAYERS(double)

#undef ATTNMAMBA_INSTANTIATE_LAYERS

}  // namespace attnmamba
