#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "attnmamba/pooled_attention.hpp"

namespace attnmamba {

/// Reference softmax attention across the N variate tokens.
template <typename T>
struct FullAttentionParams {
  LinearLayer<T> q_proj, k_proj, v_proj;  // E -> E

  explicit FullAttentionParams(std::size_t embed, std::string prefix = "full");
  void init_uniform(std::mt19937_64& rng);
};

template <typename T>
struct FullAttentionOutput {
  Var<T> out;                    // [B, N, E]
  std::uint64_t score_macs = 0;  // Q @ K^T only
};

// softmax(Q K^T / sqrt(E)) V for x[B, N, E].
template <typename T>
FullAttentionOutput<T> full_attention(Var<T> x, const BoundLinear<T>& q, const BoundLinear<T>& k,
                                      const BoundLinear<T>& v);

struct BenchConfig {
  std::size_t embed = 256;
  std::size_t batch = 1;
  std::vector<std::size_t> variates{32, 128, 512, 883};
  std::size_t warmup = 5;
  std::size_t iterations = 20;
  std::uint64_t seed = 2024;
};

struct BenchRow {
  std::size_t variates = 0;
  std::string block;  // "pooled" or "full"
  double median_ms = 0;
  std::size_t peak_bytes = 0;
  std::uint64_t score_macs = 0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;  // pooled then full for each N

  // pooled / full for the given N; throws if N was not swept.
  double time_ratio(std::size_t variates) const;
  double memory_ratio(std::size_t variates) const;
};

// Times one forward + backward pass per iteration at float32 and records
// the peak tensor allocation above the pre-iteration baseline.
BenchReport run_bench(const BenchConfig& cfg);
void write_bench_csv(const std::filesystem::path& path, const BenchReport& report);

}  // namespace attnmamba
