#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnmamba/mamba.hpp"
#include "attnmamba/pooled_attention.hpp"

namespace attnmamba {

enum class Precision { kFloat32, kFloat64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

struct ModelConfig {
  std::size_t variates = 7;     // N
  std::size_t lookback = 96;    // L
  std::size_t horizon = 24;     // T
  std::size_t embed = 32;       // E
  std::size_t expansion = 1;    // EF
  std::size_t conv_width = 32;  // KS
  std::size_t state_dim = 16;   // S
  std::size_t dt_rank = 0;      // 0 -> ceil(E / 16)
  BidirectionalMode bidirectional = BidirectionalMode::kLiteral;
  Precision precision = Precision::kFloat32;

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  MambaConfig mamba() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct AttentionMambaModel {
  ModelConfig config;
  RevIn<T> revin;
  LinearLayer<T> embed;  // L -> E, applied per variate token
  PooledAttentionParams<T> attn;
  MambaParams<T> mamba_fwd;
  MambaParams<T> mamba_bwd;
  LinearLayer<T> head;   // E -> T

  AttentionMambaModel() = default;
  // Builds and initializes every parameter from `seed`.
  AttentionMambaModel(const ModelConfig& cfg, std::uint64_t seed);

  ParamList<T> parameters();
  std::size_t parameter_count() const;
};

// Test hooks for the wiring checks.
struct ForwardHooks {
  bool unit_weights = false;      // Weights replaced by ones, so Att == Value
  bool persistence_head = false;  // head emits the last normalized lookback value
};

template <typename T>
struct ForwardResult {
  Var<T> prediction;  // [B, T, N]
  AttentionTrace<T> trace;
  Tensor<T> embedded;  // [B, N, E]
  Tensor<T> value;     // [B, N, E]
  Tensor<T> att;       // [B, N, E]
};

// x[B, L, N] -> prediction[B, T, N]. Parameters are registered on `g`.
template <typename T>
ForwardResult<T> forward(Graph<T>& g, const AttentionMambaModel<T>& m, Var<T> x, const ForwardHooks& hooks = {});

template <typename T>
Tensor<T> predict(const AttentionMambaModel<T>& m, const Tensor<T>& x);

// Named tensor in a checkpoint, stored as little-endian float32.
struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[] = "ATTNMAMBA1";

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Model parameters plus any extra named tensors (e.g. the data scaler).
template <typename T>
Checkpoint make_checkpoint(AttentionMambaModel<T>& m, std::vector<NamedTensor> extra = {});

// Throws if any model parameter is missing or has the wrong element count.
template <typename T>
AttentionMambaModel<T> model_from_checkpoint(const Checkpoint& ck);

}  // namespace attnmamba
