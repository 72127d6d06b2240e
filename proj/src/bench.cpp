#include "attnmamba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace attnmamba {

template <typename T>
FullAttentionParams<T>::FullAttentionParams(std::size_t embed, std::string prefix)
    : q_proj(prefix + ".q_proj", embed, embed),
      k_proj(prefix + ".k_proj", embed, embed),
      v_proj(prefix + ".v_proj", embed, embed) {}

template <typename T>
void FullAttentionParams<T>::init_uniform(std::mt19937_64& rng) {
  q_proj.init_uniform(rng);
  k_proj.init_uniform(rng);
  v_proj.init_uniform(rng);
}

template <typename T>
FullAttentionOutput<T> full_attention(Var<T> x, const BoundLinear<T>& q, const BoundLinear<T>& k,
                                      const BoundLinear<T>& v) {
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw ShapeError("full_attention expects [B, N, E], got " + shape_to_string(xs));
  FullAttentionOutput<T> out;
  Var<T> qv = linear(x, q);
  Var<T> kt = transpose(linear(x, k));
  Var<T> vv = linear(x, v);
  const std::uint64_t before = op_counter::macs();
  Var<T> scores = matmul(qv, kt);  // [B, N, N]
  out.score_macs = op_counter::macs() - before;
  Var<T> attn = softmax(scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(xs[2])))));
  out.out = matmul(attn, vv);
  return out;
}

double BenchReport::time_ratio(std::size_t variates) const {
  const BenchRow* pooled = nullptr;
  const BenchRow* full = nullptr;
  for (const auto& r : rows)
    if (r.variates == variates) (r.block == "pooled" ? pooled : full) = &r;
  if (!pooled || !full) throw std::out_of_range("N=" + std::to_string(variates) + " was not benchmarked");
  return pooled->median_ms / full->median_ms;
}

double BenchReport::memory_ratio(std::size_t variates) const {
  const BenchRow* pooled = nullptr;
  const BenchRow* full = nullptr;
  for (const auto& r : rows)
    if (r.variates == variates) (r.block == "pooled" ? pooled : full) = &r;
  if (!pooled || !full) throw std::out_of_range("N=" + std::to_string(variates) + " was not benchmarked");
  return static_cast<double>(pooled->peak_bytes) / static_cast<double>(full->peak_bytes);
}

namespace {

// Runs `step` warmup + iterations times; step returns the score-stage MACs.
template <typename Step>
BenchRow measure(std::size_t variates, const char* block, const BenchConfig& cfg, Step&& step) {
  using clock = std::chrono::steady_clock;
  BenchRow row;
  row.variates = variates;
  row.block = block;
  for (std::size_t i = 0; i < cfg.warmup; ++i) step();
  std::vector<double> times;
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    memory_stats::reset_peak();
    const std::size_t baseline = memory_stats::current_bytes();
    const auto t0 = clock::now();
    row.score_macs = step();
    const auto t1 = clock::now();
    row.peak_bytes = std::max(row.peak_bytes, memory_stats::peak_bytes() - baseline);
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size();
  row.median_ms = m % 2 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
  return row;
}

}  // namespace

BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.iterations < 1) throw std::invalid_argument("bench needs at least one timed iteration");
  if (cfg.embed < 4 || cfg.embed % 4 != 0) throw std::invalid_argument("embed_dim (E) must be a positive multiple of 4");
  BenchReport report;
  report.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t n : cfg.variates) {
    PooledAttentionParams<float> pooled(n, cfg.embed);
    pooled.init_uniform(rng);
    FullAttentionParams<float> full(cfg.embed);
    full.init_uniform(rng);
    Tensor<float> x(Shape{cfg.batch, n, cfg.embed});
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : x.values()) v = static_cast<float>(dist(rng));

    report.rows.push_back(measure(n, "pooled", cfg, [&] {
      Graph<float> g;
      auto out = attention_weights(g.constant(x), bind(g, pooled));
      g.backward(sum(out.weights));
      return out.trace.score_macs;
    }));
    report.rows.push_back(measure(n, "full", cfg, [&] {
      Graph<float> g;
      auto out = full_attention(g.constant(x), bind(g, full.q_proj), bind(g, full.k_proj), bind(g, full.v_proj));
      g.backward(sum(out.out));
      return out.score_macs;
    }));
  }
  return report;
}

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "variates,embed,block,median_ms,peak_bytes,score_macs,time_ratio,memory_ratio\n";
  for (const auto& r : report.rows) {
    out << r.variates << ',' << report.config.embed << ',' << r.block << ',' << r.median_ms << ',' << r.peak_bytes
        << ',' << r.score_macs << ',';
    if (r.block == "pooled") out << report.time_ratio(r.variates) << ',' << report.memory_ratio(r.variates);
    else out << ',';
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template struct FullAttentionParams<float>;
template struct FullAttentionParams<double>;
template FullAttentionOutput<float> full_attention(Var<float>, const BoundLinear<float>&, const BoundLinear<float>&,
                                                   const BoundLinear<float>&);
template FullAttentionOutput<double> full_attention(Var<double>, const BoundLinear<double>&,
                                                    const BoundLinear<double>&, const BoundLinear<double>&);

}  // namespace attnmamba
