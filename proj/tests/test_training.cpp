#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "attnmamba/training.hpp"
#include "test_support.hpp"

namespace attnmamba {
namespace {

// Independent scalar Adam, written from the textbook update.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

struct ScalarParam {
  Tensor<double> theta{Shape{1}, 0.0};
  ParamList<double> list() { return {{"theta", &theta}}; }
};

TEST(AdamTest, FirstStepMovesByLearningRate) {
  ScalarParam p;
  AdamState<double> st;
  st.options.lr = 0.1;
  adam_step(p.list(), Gradients<double>{{"theta", Tensor<double>(Shape{1}, 1.0)}}, st);
  EXPECT_NEAR(p.theta[0], -0.1 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  ScalarParam p;
  p.theta[0] = 0.75;
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step(p.list(), Gradients<double>{{"theta", Tensor<double>(Shape{1})}}, st);
  EXPECT_EQ(p.theta[0], 0.75);
  EXPECT_EQ(st.step_count, 5u);
}

TEST(AdamTest, ZeroLearningRateIsIdentity) {
  std::mt19937_64 rng(70);
  Tensor<double> w = testing::random_tensor({3, 4}, rng);
  const Tensor<double> before = w;
  ParamList<double> params{{"w", &w}};
  AdamState<double> st;
  st.options.lr = 0.0;
  for (int i = 0; i < 10; ++i) adam_step(params, Gradients<double>{{"w", testing::random_tensor({3, 4}, rng)}}, st);
  EXPECT_EQ(w, before);
}

TEST(AdamTest, QuadraticMatchesScalarOracle) {
  ScalarParam p;
  p.theta[0] = 1.0;
  AdamState<double> st;
  st.options.lr = 0.1;
  ScalarAdam oracle{0.1};
  double expected = 1.0;
  for (int i = 0; i < 50; ++i) {
    const double g = 2 * p.theta[0];
    adam_step(p.list(), Gradients<double>{{"theta", Tensor<double>(Shape{1}, g)}}, st);
    expected = oracle.step(expected, 2 * expected);
    ASSERT_NEAR(p.theta[0], expected, 1e-14) << "step " << i + 1;
  }
  EXPECT_LT(std::abs(p.theta[0]), 0.05);
}

TEST(AdamTest, NonFiniteGradientAbortsWithName) {
  Tensor<double> a(Shape{2}, 1.0), b(Shape{2}, 1.0);
  ParamList<double> params{{"a", &a}, {"b", &b}};
  AdamState<double> st;
  Tensor<double> bad(Shape{2}, 0.5);
  bad[1] = std::numeric_limits<double>::infinity();
  try {
    adam_step(params, Gradients<double>{{"a", Tensor<double>(Shape{2}, 0.5)}, {"b", bad}}, st);
    FAIL();
  } catch (const NonFiniteGradientError& e) {
    EXPECT_EQ(e.parameter(), "b");
  }
  EXPECT_EQ(a, Tensor<double>(Shape{2}, 1.0));
  EXPECT_EQ(st.step_count, 0u);
}

TEST(ClipTest, RescalesToMaxNorm) {
  Gradients<double> g{{"a", Tensor<double>(Shape{2}, std::vector<double>{3, 0})},
                      {"b", Tensor<double>(Shape{1}, std::vector<double>{4})}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.at("a")[0], 0.6, 1e-15);
  EXPECT_NEAR(g.at("b")[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_global_norm(g, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(g.at("b")[0], 0.8, 1e-15);
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.variates = 3;
  c.lookback = 12;
  c.horizon = 4;
  c.embed = 8;
  c.conv_width = 4;
  c.state_dim = 4;
  return c;
}

SplitDataset tiny_data(std::uint64_t seed = 1) {
  SyntheticConfig sc;
  sc.n_variates = 3;
  sc.timesteps = 200;
  sc.frequencies = {1.0 / 12};
  sc.seed = seed;
  return fit_apply_scaler(split_dataset(generate_synthetic(sc), SplitRatios{}, 12, 4));
}

std::vector<std::uint8_t> param_bytes(AttentionMambaModel<float>& m) {
  std::vector<std::uint8_t> out;
  for (const auto& p : m.parameters()) {
    const auto* b = reinterpret_cast<const std::uint8_t*>(p.tensor->data());
    out.insert(out.end(), b, b + p.tensor->numel() * sizeof(float));
  }
  return out;
}

TEST(TrainTest, ZeroEpochsLeavesModelUnchanged) {
  AttentionMambaModel<float> m(tiny_model(), 3);
  const auto before = param_bytes(m);
  TrainRunConfig cfg;
  cfg.epochs = 0;
  auto r = train(m, tiny_data(), cfg);
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(param_bytes(m), before);
}

TEST(TrainTest, RerunIsBitIdentical) {
  const auto data = tiny_data();
  TrainRunConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  AttentionMambaModel<float> a(tiny_model(), 4), b(tiny_model(), 4);
  auto ra = train(a, data, cfg);
  auto rb = train(b, data, cfg);
  ASSERT_EQ(ra.curve.size(), 3u);
  ASSERT_EQ(rb.curve.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(std::memcmp(&ra.curve[i].train_mse, &rb.curve[i].train_mse, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&ra.curve[i].val_mse, &rb.curve[i].val_mse, sizeof(double)), 0);
  }
  EXPECT_EQ(param_bytes(a), param_bytes(b));
}

TEST(TrainTest, LossDecreasesAndCurveIsFinite) {
  const auto data = tiny_data();
  TrainRunConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 16;
  cfg.lr = 3e-3;
  AttentionMambaModel<float> m(tiny_model(), 5);
  WindowMetrics before = evaluate_windows(m, data.values, data.train_windows);
  auto r = train(m, data, cfg);
  for (const auto& e : r.curve) {
    EXPECT_TRUE(std::isfinite(e.train_mse));
    EXPECT_TRUE(std::isfinite(e.val_mse));
  }
  EXPECT_LT(r.curve.back().train_mse, r.curve.front().train_mse);
  EXPECT_LT(evaluate_windows(m, data.values, data.train_windows).mse, before.mse);
  EXPECT_GE(r.best_epoch, 1u);
}

TEST(TrainTest, KeepsBestValidationParameters) {
  const auto data = tiny_data();
  TrainRunConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.lr = 3e-3;
  AttentionMambaModel<float> m(tiny_model(), 6);
  auto r = train(m, data, cfg);
  const double val = evaluate_windows(m, data.values, data.val_windows).mse;
  EXPECT_NEAR(val, r.curve[r.best_epoch - 1].val_mse, 1e-9);
  EXPECT_EQ(r.best_val_mse, r.curve[r.best_epoch - 1].val_mse);
}

TEST(TrainTest, TargetLossStopsEarly) {
  const auto data = tiny_data();
  TrainRunConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.target_train_mse = 1e9;
  AttentionMambaModel<float> m(tiny_model(), 7);
  auto r = train(m, data, cfg);
  EXPECT_EQ(r.curve.size(), 1u);
  EXPECT_TRUE(r.reached_target);
}

TEST(TrainTest, DivergenceRestoresLastGoodParameters) {
  SplitDataset data = tiny_data();
  for (auto& v : data.values.values()) v *= 1e25;  // squared error overflows float
  AttentionMambaModel<float> m(tiny_model(), 8);
  const auto before = param_bytes(m);
  TrainRunConfig cfg;
  cfg.epochs = 2;
  EXPECT_THROW(train(m, data, cfg), DivergenceError);
  EXPECT_EQ(param_bytes(m), before);
}

TEST(PersistenceTest, HandComputed) {
  Tensor<double> values(Shape{5, 1}, std::vector<double>{0, 1, 2, 3, 4});
  auto w = make_windows(2, 2, {0, 5});  // windows start at 0 and 1
  auto r = persistence_metrics(values, w);
  // start 0: last=1, targets 2,3 -> errors 1,2; start 1: last=2, targets 3,4 -> 1,2
  EXPECT_DOUBLE_EQ(r.mse, 2.5);
  EXPECT_DOUBLE_EQ(r.mae, 1.5);
}

}  // namespace
}  // namespace attnmamba
