#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "attnmamba/tensor.hpp"

namespace attnmamba {

template <typename T>
class Graph;

/// Handle to a node recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Result of a backward pass: gradient per named parameter. Parameters
/// registered several times under one name have their gradients summed.
template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

/// Reverse-mode AD tape. Nodes are appended in evaluation order, so the
/// tape is topologically sorted by construction. Confined to one thread.
template <typename T>
class Graph {
 public:
  // Called with the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Graph&, const Tensor<T>&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> parameter(std::string name, Tensor<T> value);

  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Zero-initialized on first access during backward.
  Tensor<T>& grad_buffer(std::size_t id);

  // Gradient of the last backward pass w.r.t. any node (zeros if unreached).
  Tensor<T> grad(Var<T> v) const;

  Gradients<T> backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string param_name;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // stable addresses: callers hold value() references across records
  std::size_t visits_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

// Elementwise, identical shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);

// `v` has the rank of `x`; each extent equals x's or is 1.
template <typename T> Var<T> add_bcast(Var<T> x, Var<T> v);
template <typename T> Var<T> mul_bcast(Var<T> x, Var<T> v);

template <typename T> Var<T> scale(Var<T> x, T s);
template <typename T> Var<T> add_scalar(Var<T> x, T s);
template <typename T> Var<T> reciprocal(Var<T> x);
template <typename T> Var<T> square(Var<T> x);

// Swaps the two trailing axes (materialized copy).
template <typename T> Var<T> transpose(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis);
template <typename T> Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Var<T> reverse(Var<T> x, std::size_t axis);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Keeps the reduced axis with extent 1.
template <typename T> Var<T> sum_axis(Var<T> x, std::size_t axis);
// Gradient goes to the first maximal element along the axis.
template <typename T> Var<T> max_axis(Var<T> x, std::size_t axis);

template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> erf(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> silu(Var<T> x);
// Exact form 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> softplus(Var<T> x);
// Max-subtracted, along the last axis.
template <typename T> Var<T> softmax(Var<T> x);

// [..., M, K] @ [..., K, P] for rank 2 or 3; a batch extent of 1 broadcasts.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// x[..., in] @ weight[in, out] + bias[out].
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

// x[B, N, C] convolved causally along N with per-channel kernel weight[C, K]:
// y[b,t,c] = bias[c] + sum_k weight[c,k] * x[b, t-K+1+k, c], zero padded.
template <typename T> Var<T> depthwise_conv1d_causal(Var<T> x, Var<T> weight, Var<T> bias);

enum class PoolMode { kAverage, kMax };

// Adaptive pooling window i of an input of length `in` pooled to `out`:
// [floor(i*in/out), ceil((i+1)*in/out)).
struct PoolWindow {
  std::size_t begin;
  std::size_t end;
};
PoolWindow adaptive_window(std::size_t i, std::size_t in, std::size_t out);

// Adaptive pooling along `axis` to `target` entries. target > extent is
// accepted (windows stay non-empty); adaptive_pool_1d enforces target <= extent.
template <typename T> Var<T> adaptive_pool(Var<T> x, std::size_t axis, std::size_t target, PoolMode mode);
// Pools the last axis; requires 1 <= target <= extent.
template <typename T> Var<T> adaptive_pool_1d(Var<T> x, std::size_t target, PoolMode mode);

template <typename T> Var<T> mse_loss(Var<T> prediction, Var<T> target);

}  // namespace attnmamba
