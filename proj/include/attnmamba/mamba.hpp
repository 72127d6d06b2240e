#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "attnmamba/layers.hpp"

namespace attnmamba {

struct MambaConfig {
  std::size_t embed = 32;       // E
  std::size_t expansion = 1;    // EF
  std::size_t conv_width = 32;  // KS; taps beyond the sequence only see padding
  std::size_t state_dim = 16;   // S
  std::size_t dt_rank = 0;      // 0 -> ceil(E / 16)

  std::size_t inner() const { return expansion * embed; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (embed + 15) / 16; }
};

/// Selective-SSM parameters for one scan direction.
template <typename T>
struct MambaParams {
  MambaConfig config;
  LinearLayer<T> in_proj;   // E -> 2 * inner (branch | gate)
  Tensor<T> conv_weight;    // [inner, KS]
  Tensor<T> conv_bias;      // [inner]
  LinearLayer<T> x_proj;    // inner -> dt_rank + 2S (dt | B | C)
  LinearLayer<T> dt_proj;   // dt_rank -> inner
  Tensor<T> a_log;          // [inner, S]; A = -exp(a_log)
  Tensor<T> d_skip;         // [inner]
  LinearLayer<T> out_proj;  // inner -> E
  std::string prefix;

  MambaParams() = default;
  MambaParams(const MambaConfig& cfg, std::string name);

  // Standard selective-SSM recipe: uniform linears, A_log = log(1..S) per
  // row, D = 1, dt_proj bias so that softplus(bias) lies in [1e-3, 1e-1].
  void init(std::mt19937_64& rng);
  void append_params(ParamList<T>& out);
};

template <typename T>
struct BoundMamba {
  MambaConfig config;
  BoundLinear<T> in_proj;
  Var<T> conv_weight;
  Var<T> conv_bias;
  BoundLinear<T> x_proj;
  BoundLinear<T> dt_proj;
  Var<T> a_log;
  Var<T> d_skip;
  BoundLinear<T> out_proj;
};

template <typename T>
BoundMamba<T> bind(Graph<T>& g, const MambaParams<T>& p);

// Per channel c and token t, with h_0 = 0:
//   h_t = exp(delta_t * A_c) * h_{t-1} + delta_t * B_t * u_t
//   y_t = <C_t, h_t> + D_c * u_t
// u, delta: [B, C, N]; a: [C, S]; b_ssm, c_ssm: [B, N, S]; d_skip: [C].
template <typename T>
Var<T> selective_scan(Var<T> u, Var<T> delta, Var<T> a, Var<T> b_ssm, Var<T> c_ssm, Var<T> d_skip);

// x[B, N, E] -> [B, N, E].
template <typename T>
Var<T> mamba_forward(Var<T> x, const BoundMamba<T>& p);

enum class BidirectionalMode {
  kLiteral,       // RVS(fwd(x) + bwd(RVS(x)))
  kConventional,  // fwd(x) + RVS(bwd(RVS(x)))
};

template <typename T>
Var<T> bidirectional_mamba(Var<T> x, const BoundMamba<T>& fwd, const BoundMamba<T>& bwd,
                           BidirectionalMode mode = BidirectionalMode::kLiteral);

}  // namespace attnmamba
