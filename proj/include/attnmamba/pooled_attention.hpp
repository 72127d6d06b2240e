#pragma once

#include <cstdint>
#include <random>

#include "attnmamba/layers.hpp"

namespace attnmamba {

/// Parameters of the Adaptive Pooling attention block for N variates and
/// embedding width E (E divisible by 4).
template <typename T>
struct PooledAttentionParams {
  LinearLayer<T> q_proj;     // E -> E
  LinearLayer<T> k_proj;     // E -> E
  LinearLayer<T> recover_e;  // E/4 -> E, last axis
  LinearLayer<T> recover_n;  // E/4 -> N, middle axis

  PooledAttentionParams() = default;
  PooledAttentionParams(std::size_t variates, std::size_t embed, std::string prefix = "attn");

  std::size_t variates() const { return recover_n.out_features(); }
  std::size_t embed() const { return q_proj.in_features(); }
  std::size_t pooled() const { return embed() / 4; }

  void init_uniform(std::mt19937_64& rng);
  void append_params(ParamList<T>& out);
};

/// Named intermediates of one pooled-attention forward pass.
template <typename T>
struct AttentionTrace {
  Tensor<T> q, k;              // [B, N, E]
  Tensor<T> fused_q, fused_k;  // [B, E/4, E/4]
  Tensor<T> pool_q, pool_k;    // [B, E/4, E/4]
  Tensor<T> scores;            // [B, E/4, E/4]
  Tensor<T> weights;           // [B, N, E]
  // Multiply-accumulates spent in the PoolQ @ PoolK product.
  std::uint64_t score_macs = 0;
};

// AvgPool + MaxPool over the two trailing axes of x[B, N, E], each pooled to
// `target` (axis N first, then axis E).
template <typename T>
Var<T> fuse_pool(Var<T> x, std::size_t target);

template <typename T>
struct BoundPooledAttention {
  BoundLinear<T> q_proj, k_proj, recover_e, recover_n;
};

template <typename T>
BoundPooledAttention<T> bind(Graph<T>& g, const PooledAttentionParams<T>& p);

template <typename T>
struct AttentionOutput {
  Var<T> weights;
  AttentionTrace<T> trace;
};

template <typename T>
AttentionOutput<T> attention_weights(Var<T> x_embed, const BoundPooledAttention<T>& p);

}  // namespace attnmamba
