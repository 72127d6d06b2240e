#include "attnmamba/pooled_attention.hpp"

#include <stdexcept>

namespace attnmamba {

template <typename T>
PooledAttentionParams<T>::PooledAttentionParams(std::size_t variates, std::size_t embed, std::string prefix)
    : q_proj(prefix + ".q_proj", embed, embed),
      k_proj(prefix + ".k_proj", embed, embed),
      recover_e(prefix + ".recover_e", embed / 4, embed),
      recover_n(prefix + ".recover_n", embed / 4, variates) {
  if (embed % 4 != 0 || embed < 4) {
    throw std::invalid_argument("embedding dimension must be a positive multiple of 4, got " +
                                std::to_string(embed));
  }
}

template <typename T>
void PooledAttentionParams<T>::init_uniform(std::mt19937_64& rng) {
  q_proj.init_uniform(rng);
  k_proj.init_uniform(rng);
  recover_e.init_uniform(rng);
  recover_n.init_uniform(rng);
}

template <typename T>
void PooledAttentionParams<T>::append_params(ParamList<T>& out) {
  q_proj.append_params(out);
  k_proj.append_params(out);
  recover_e.append_params(out);
  recover_n.append_params(out);
}

template <typename T>
Var<T> fuse_pool(Var<T> x, std::size_t target) {
  if (x.shape().size() != 3) throw ShapeError("fuse_pool expects [B, N, E], got " + shape_to_string(x.shape()));
  const auto pool2 = [&](PoolMode mode) {
    return adaptive_pool(adaptive_pool(x, 1, target, mode), 2, target, mode);
  };
  return add(pool2(PoolMode::kAverage), pool2(PoolMode::kMax));
}

template <typename T>
BoundPooledAttention<T> bind(Graph<T>& g, const PooledAttentionParams<T>& p) {
  return {bind(g, p.q_proj), bind(g, p.k_proj), bind(g, p.recover_e), bind(g, p.recover_n)};
}

template <typename T>
AttentionOutput<T> attention_weights(Var<T> x_embed, const BoundPooledAttention<T>& p) {
  const Shape& xs = x_embed.shape();
  if (xs.size() != 3) throw ShapeError("attention_weights expects [B, N, E], got " + shape_to_string(xs));
  const std::size_t embed = xs[2];
  if (embed % 4 != 0) throw ShapeError("embedding dimension must be divisible by 4");
  const std::size_t pooled = embed / 4;

  AttentionOutput<T> out;
  AttentionTrace<T>& tr = out.trace;

  Var<T> q = linear(x_embed, p.q_proj);
  Var<T> k = linear(x_embed, p.k_proj);
  Var<T> fq = fuse_pool(q, pooled);
  Var<T> fk = fuse_pool(k, pooled);
  Var<T> pq = gelu(fq);
  Var<T> pk = gelu(fk);

  const std::uint64_t before = op_counter::macs();
  Var<T> scores = matmul(pq, pk);
  tr.score_macs = op_counter::macs() - before;

  // Softmax over the last axis, then recover E on the last axis and N on
  // the middle axis.
  Var<T> attn = softmax(scores);
  Var<T> wide = linear(attn, p.recover_e);                 // [B, E/4, E]
  Var<T> recovered = linear(transpose(wide), p.recover_n);  // [B, E, N]
  out.weights = transpose(recovered);                       // [B, N, E]

  tr.q = q.value();
  tr.k = k.value();
  tr.fused_q = fq.value();
  tr.fused_k = fk.value();
  tr.pool_q = pq.value();
  tr.pool_k = pk.value();
  tr.scores = scores.value();
  tr.weights = out.weights.value();
  return out;
}

#define ATTNMAMBA_INSTANTIATE_ATTN(T)                                                   \
  template struct PooledAttentionParams<T>;                                            \
  template Var<T> fuse_pool(Var<T>, std::size_t);                                      \
  template BoundPooledAttention<T> bind(Graph<T>&, const PooledAttentionParams<T>&);   \
  template AttentionOutput<T> attention_weights(Var<T>, const BoundPooledAttention<T>&);

ATTNMAMBA_INSTANTIATE_ATTN(float)
ATTNMAMBA_INSTANTIATE_ATTN(double)

#undef ATTNMAMBA_INSTANTIATE_ATTN

}  // namespace attnmamba
