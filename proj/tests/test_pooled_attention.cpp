#include <gtest/gtest.h>

#include "attnmamba/pooled_attention.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace attnmamba {
namespace {

using testing::random_tensor;

Tensor<double> pool_vec(const std::vector<double>& x, std::size_t out, PoolMode mode) {
  Graph<double> g;
  return adaptive_pool_1d(g.constant(Tensor<double>(Shape{x.size()}, x)), out, mode).value();
}

TEST(AdaptivePoolTest, IdentityWhenSizesMatch) {
  std::vector<double> x{3, -1, 4, 1, 5};
  for (auto mode : {PoolMode::kAverage, PoolMode::kMax}) EXPECT_EQ(pool_vec(x, 5, mode), Tensor<double>(Shape{5}, x));
}

TEST(AdaptivePoolTest, HandComputedHalving) {
  EXPECT_EQ(pool_vec({1, 2, 3, 4}, 2, PoolMode::kAverage), Tensor<double>(Shape{2}, std::vector<double>{1.5, 3.5}));
  EXPECT_EQ(pool_vec({1, 2, 3, 4}, 2, PoolMode::kMax), Tensor<double>(Shape{2}, std::vector<double>{2, 4}));
}

TEST(AdaptivePoolTest, OverlappingWindowsSevenToThree) {
  EXPECT_EQ(adaptive_window(0, 7, 3).begin, 0u);
  EXPECT_EQ(adaptive_window(0, 7, 3).end, 3u);
  EXPECT_EQ(adaptive_window(1, 7, 3).begin, 2u);
  EXPECT_EQ(adaptive_window(1, 7, 3).end, 5u);
  EXPECT_EQ(adaptive_window(2, 7, 3).begin, 4u);
  EXPECT_EQ(adaptive_window(2, 7, 3).end, 7u);
  std::vector<double> ramp{0, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(pool_vec(ramp, 3, PoolMode::kAverage), Tensor<double>(Shape{3}, std::vector<double>{1, 3, 5}));
  EXPECT_EQ(pool_vec(ramp, 3, PoolMode::kAverage),
            Tensor<double>(Shape{3}, oracle::adaptive_pool_enumerated(ramp, 3, false)));
}

TEST(AdaptivePoolTest, MatchesEnumerationOracleExhaustively) {
  std::mt19937_64 rng(31);
  for (std::size_t in = 1; in <= 32; ++in) {
    auto x = random_tensor({in}, rng);
    std::vector<double> xs(x.values().begin(), x.values().end());
    for (std::size_t out = 1; out <= in; ++out) {
      EXPECT_EQ(pool_vec(xs, out, PoolMode::kAverage),
                Tensor<double>(Shape{out}, oracle::adaptive_pool_enumerated(xs, out, false)));
      EXPECT_EQ(pool_vec(xs, out, PoolMode::kMax),
                Tensor<double>(Shape{out}, oracle::adaptive_pool_enumerated(xs, out, true)));
    }
  }
}

TEST(AdaptivePoolTest, RejectsInvalidTargets) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>(Shape{2, 4}));
  EXPECT_THROW(adaptive_pool_1d(x, 5, PoolMode::kAverage), ShapeError);
  EXPECT_THROW(adaptive_pool_1d(x, 0, PoolMode::kMax), ShapeError);
}

TEST(FusePoolTest, ConstantInputDoubles) {
  Graph<double> g;
  auto y = fuse_pool(g.constant(Tensor<double>(Shape{2, 9, 16}, 1.75)), 4).value();
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 3.5);
}

TEST(FusePoolTest, ZeroInZeroOut) {
  Graph<double> g;
  auto y = fuse_pool(g.constant(Tensor<double>(Shape{1, 5, 8})), 2).value();
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

// Pools every column along N, then every row along E, with the oracle.
Tensor<double> two_axis_oracle(const Tensor<double>& x, std::size_t target, bool max_mode) {
  const std::size_t n = x.dim(1), e = x.dim(2);
  Tensor<double> out(Shape{x.dim(0), target, target});
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    // N axis first, matching the library's documented order.
    std::vector<std::vector<double>> pooled_n(e);
    for (std::size_t j = 0; j < e; ++j) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = x.at({b, i, j});
      pooled_n[j] = oracle::adaptive_pool_enumerated(col, target, max_mode);
    }
    for (std::size_t i = 0; i < target; ++i) {
      std::vector<double> row(e);
      for (std::size_t j = 0; j < e; ++j) row[j] = pooled_n[j][i];
      auto r = oracle::adaptive_pool_enumerated(row, target, max_mode);
      for (std::size_t j = 0; j < target; ++j) out.at({b, i, j}) = r[j];
    }
  }
  return out;
}

TEST(FusePoolTest, RampMatchesAxisComposition) {
  Tensor<double> x(Shape{1, 4, 8});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
  Graph<double> g;
  auto fused = fuse_pool(g.constant(x), 2).value();
  auto avg = two_axis_oracle(x, 2, false);
  auto mx = two_axis_oracle(x, 2, true);
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_EQ(fused[i], avg[i] + mx[i]);
}

TEST(FusePoolTest, EqualsAveragePlusMaxOnRandomInputs) {
  std::mt19937_64 rng(32);
  for (std::size_t n : {3u, 7u, 8u, 13u}) {
    auto x = random_tensor({2, n, 32}, rng);
    Graph<double> g;
    auto xv = g.constant(x);
    auto fused = fuse_pool(xv, 8).value();
    auto avg = adaptive_pool(adaptive_pool(xv, 1, 8, PoolMode::kAverage), 2, 8, PoolMode::kAverage).value();
    auto mx = adaptive_pool(adaptive_pool(xv, 1, 8, PoolMode::kMax), 2, 8, PoolMode::kMax).value();
    for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_EQ(fused[i], avg[i] + mx[i]);
    // Separable two-axis pooling equals the enumerated oracle.
    auto oracle_avg = two_axis_oracle(x, 8, false);
    auto oracle_max = two_axis_oracle(x, 8, true);
    for (std::size_t i = 0; i < mx.numel(); ++i) EXPECT_EQ(mx[i], oracle_max[i]);
    EXPECT_LT(testing::max_abs_diff(avg, oracle_avg), 1e-15);
  }
}

PooledAttentionParams<double> make_params(std::size_t n, std::size_t e, std::uint64_t seed) {
  PooledAttentionParams<double> p(n, e);
  std::mt19937_64 rng(seed);
  p.init_uniform(rng);
  return p;
}

TEST(AttentionWeightsTest, ShapeContract) {
  auto p = make_params(7, 32, 1);
  std::mt19937_64 rng(33);
  Graph<double> g;
  auto out = attention_weights(g.constant(random_tensor({2, 7, 32}, rng)), bind(g, p));
  EXPECT_EQ(out.weights.shape(), (Shape{2, 7, 32}));
  EXPECT_EQ(out.trace.q.shape(), (Shape{2, 7, 32}));
  EXPECT_EQ(out.trace.k.shape(), (Shape{2, 7, 32}));
  for (const auto* t : {&out.trace.fused_q, &out.trace.fused_k, &out.trace.pool_q, &out.trace.pool_k, &out.trace.scores})
    EXPECT_EQ(t->shape(), (Shape{2, 8, 8}));
  EXPECT_EQ(out.trace.weights, out.weights.value());
}

TEST(AttentionWeightsTest, ZeroInputGivesZeroScoresAndUniformSoftmax) {
  auto p = make_params(5, 16, 2);
  p.q_proj.bias.fill(0);
  p.k_proj.bias.fill(0);
  Graph<double> g;
  auto out = attention_weights(g.constant(Tensor<double>(Shape{1, 5, 16})), bind(g, p));
  for (double s : out.trace.scores.values()) EXPECT_EQ(s, 0.0);
  auto sm = softmax(g.constant(out.trace.scores)).value();
  for (double v : sm.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(AttentionWeightsTest, SoftmaxOfScoresRowsSumToOne) {
  auto p = make_params(6, 32, 3);
  std::mt19937_64 rng(34);
  Graph<double> g;
  auto out = attention_weights(g.constant(random_tensor({3, 6, 32}, rng)), bind(g, p));
  auto sm = softmax(g.constant(out.trace.scores)).value();
  for (std::size_t r = 0; r < 3 * 8; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 8; ++c) total += sm[r * 8 + c];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(AttentionWeightsTest, GradientWrtQueryProjection) {
  auto p = make_params(5, 16, 4);
  std::mt19937_64 rng(35);
  const auto x = random_tensor({2, 5, 16}, rng);
  auto r = testing::grad_check({p.q_proj.weight}, [&](Graph<double>& g, const std::vector<Var<double>>& v) {
    auto bound = bind(g, p);
    bound.q_proj.weight = v[0];
    return sum(attention_weights(g.constant(x), bound).weights);
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(AttentionWeightsTest, ScoreStageCostIndependentOfVariates) {
  for (std::size_t n : {4u, 7u, 32u, 128u}) {
    auto p = make_params(n, 32, 5);
    Graph<double> g;
    auto out = attention_weights(g.constant(Tensor<double>(Shape{2, n, 32}, 0.1)), bind(g, p));
    EXPECT_EQ(out.trace.score_macs, 2u * 8 * 8 * 8) << "N=" << n;
  }
}

TEST(AttentionWeightsTest, NotPermutationEquivariant) {
  auto p = make_params(6, 16, 6);
  std::mt19937_64 rng(36);
  auto x = random_tensor({1, 6, 16}, rng);
  Tensor<double> permuted(x.shape());
  const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 16; ++j) permuted.at({0, i, j}) = x.at({0, perm[i], j});
  Graph<double> g;
  auto bound = bind(g, p);
  auto w = attention_weights(g.constant(x), bound).weights.value();
  auto wp = attention_weights(g.constant(permuted), bound).weights.value();
  double diff = 0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 16; ++j) diff = std::max(diff, std::abs(wp.at({0, i, j}) - w.at({0, perm[i], j})));
  EXPECT_GT(diff, 1e-6);
}

TEST(AttentionWeightsTest, RejectsEmbeddingNotDivisibleByFour) {
  EXPECT_THROW(PooledAttentionParams<double>(4, 30), std::invalid_argument);
}

}  // namespace
}  // namespace attnmamba
