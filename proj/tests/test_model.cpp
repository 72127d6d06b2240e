#include <gtest/gtest.h>

#include <filesystem>

#include "attnmamba/model.hpp"
#include "test_support.hpp"

namespace attnmamba {
namespace {

using testing::random_tensor;

ModelConfig tiny_config() {
  ModelConfig c;
  c.variates = 3;
  c.lookback = 8;
  c.horizon = 4;
  c.embed = 8;
  c.conv_width = 4;
  c.state_dim = 4;
  return c;
}

TEST(ModelConfigTest, ValidationNamesTheConstraint) {
  ModelConfig c;
  c.embed = 30;
  try {
    c.validate();
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("embed_dim"), std::string::npos);
  }
  c.embed = 32;
  c.lookback = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(ModelTest, ForwardShapeContract) {
  ModelConfig cfg;
  cfg.variates = 7;
  cfg.lookback = 96;
  cfg.horizon = 24;
  AttentionMambaModel<double> m(cfg, 1);
  std::mt19937_64 rng(50);
  Graph<double> g;
  auto r = forward(g, m, g.constant(random_tensor({2, 96, 7}, rng)));
  EXPECT_EQ(r.prediction.shape(), (Shape{2, 24, 7}));
  EXPECT_EQ(r.embedded.shape(), (Shape{2, 7, 32}));
  EXPECT_EQ(r.trace.scores.shape(), (Shape{2, 8, 8}));
  EXPECT_TRUE(r.prediction.value().all_finite());
}

TEST(ModelTest, RejectsWrongShapeAndNonFiniteInput) {
  AttentionMambaModel<double> m(tiny_config(), 1);
  Graph<double> g;
  EXPECT_THROW(forward(g, m, g.constant(Tensor<double>(Shape{1, 8, 4}))), ShapeError);
  Tensor<double> bad(Shape{1, 8, 3}, 1.0);
  bad[5] = std::nan("");
  EXPECT_THROW(forward(g, m, g.constant(bad)), std::invalid_argument);
}

TEST(ModelTest, UnitWeightsMakeFusionEqualValue) {
  AttentionMambaModel<double> m(tiny_config(), 2);
  std::mt19937_64 rng(51);
  Graph<double> g;
  auto r = forward(g, m, g.constant(random_tensor({2, 8, 3}, rng)), ForwardHooks{true, false});
  EXPECT_EQ(r.att, r.value);
}

TEST(ModelTest, FusionIsElementwiseProduct) {
  AttentionMambaModel<double> m(tiny_config(), 3);
  std::mt19937_64 rng(52);
  Graph<double> g;
  auto r = forward(g, m, g.constant(random_tensor({2, 8, 3}, rng)));
  for (std::size_t i = 0; i < r.att.numel(); ++i) EXPECT_EQ(r.att[i], r.trace.weights[i] * r.value[i]);
}

TEST(ModelTest, PersistenceHeadRepeatsLastObservation) {
  AttentionMambaModel<double> m(tiny_config(), 4);
  std::mt19937_64 rng(53);
  auto x = random_tensor({2, 8, 3}, rng, -4, 4);
  Graph<double> g;
  auto y = forward(g, m, g.constant(x), ForwardHooks{false, true}).prediction.value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(y.at({b, t, n}), x.at({b, 7, n}), 1e-12);
}

TEST(ModelTest, SameSeedSameOutput) {
  std::mt19937_64 rng(54);
  auto x = random_tensor({2, 8, 3}, rng);
  AttentionMambaModel<double> a(tiny_config(), 9), b(tiny_config(), 9), c(tiny_config(), 10);
  EXPECT_EQ(predict(a, x), predict(b, x));
  EXPECT_GT(testing::max_abs_diff(predict(a, x), predict(c, x)), 1e-9);
}

TEST(ModelTest, LiteralAndConventionalCombinationsDiffer) {
  auto cfg = tiny_config();
  AttentionMambaModel<double> lit(cfg, 5);
  cfg.bidirectional = BidirectionalMode::kConventional;
  AttentionMambaModel<double> conv(cfg, 5);
  std::mt19937_64 rng(55);
  auto x = random_tensor({1, 8, 3}, rng);
  EXPECT_GT(testing::max_abs_diff(predict(lit, x), predict(conv, x)), 1e-9);
}

TEST(ParameterCountTest, SingleLinearLayer) {
  LinearLayer<double> l("l", 2, 3);
  ParamList<double> ps;
  l.append_params(ps);
  std::size_t n = 0;
  for (auto& p : ps) n += p.tensor->numel();
  EXPECT_EQ(n, 9u);
}

TEST(ParameterCountTest, MatchesClosedFormPerGroup) {
  ModelConfig cfg;  // N=7, L=96, T=24, E=32, EF=1, KS=32, S=16
  AttentionMambaModel<float> m(cfg, 1);
  const std::size_t n = 7, l = 96, t = 24, e = 32, inner = 32, ks = 32, s = 16, r = 2;
  EXPECT_EQ(m.embed.weight.numel() + m.embed.bias.numel(), 3104u);
  const std::size_t revin = 2 * n;
  const std::size_t embed = l * e + e;
  const std::size_t attn = 2 * (e * e + e) + (e / 4 * e + e) + (e / 4 * n + n);
  const std::size_t mamba = (e * 2 * inner + 2 * inner) + (inner * ks + inner) + (inner * (r + 2 * s) + r + 2 * s) +
                            (r * inner + inner) + inner * s + inner + (inner * e + e);
  const std::size_t head = e * t + t;
  EXPECT_EQ(m.parameter_count(), revin + embed + attn + 2 * mamba + head);
}

TEST(ModelGradientTest, AllParametersMatchFiniteDifferences) {
  AttentionMambaModel<double> m(tiny_config(), 6);
  std::mt19937_64 rng(56);
  const auto x = random_tensor({2, 8, 3}, rng);
  const auto target = random_tensor({2, 4, 3}, rng);
  const auto loss_of = [&](Graph<double>& g) {
    return mse_loss(forward(g, m, g.constant(x)).prediction, g.constant(target));
  };
  Gradients<double> grads;
  {
    Graph<double> g;
    grads = g.backward(loss_of(g));
  }
  const double step = 1e-5;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& p : m.parameters()) {
    const auto& ga = grads.at(p.name);
    ASSERT_EQ(ga.numel(), p.tensor->numel()) << p.name;
    double pd = 0, pa = 0, pn = 0;
    for (std::size_t k = 0; k < p.tensor->numel(); ++k) {
      const double orig = (*p.tensor)[k];
      (*p.tensor)[k] = orig + step;
      Graph<double> g1;
      const double up = loss_of(g1).value()[0];
      (*p.tensor)[k] = orig - step;
      Graph<double> g2;
      const double down = loss_of(g2).value()[0];
      (*p.tensor)[k] = orig;
      const double num = (up - down) / (2 * step);
      pd += (ga[k] - num) * (ga[k] - num);
      pa += ga[k] * ga[k];
      pn += num * num;
    }
    // Gradients below ~1e-5 in norm sit at the finite-difference noise floor
    // (loss ~1, step 1e-5), so those are checked in absolute terms.
    const double norm = std::sqrt(std::max(pa, pn));
    if (norm > 1e-5) {
      EXPECT_LT(std::sqrt(pd) / norm, 1e-4) << p.name;
    } else {
      EXPECT_LT(std::sqrt(pd), 1e-9) << p.name;
    }
    diff2 += pd;
    a2 += pa;
    n2 += pn;
  }
  EXPECT_LT(std::sqrt(diff2) / std::sqrt(std::max(a2, n2)), 1e-4);
}

TEST(CheckpointTest, RoundTripPreservesPredictions) {
  AttentionMambaModel<float> m(tiny_config(), 7);
  auto ck = make_checkpoint(m, {{"scaler.mean", Tensor<float>(Shape{3}, 0.5f)}});
  auto bytes = encode_checkpoint(ck);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 10), "ATTNMAMBA1");
  auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config.variates, 3u);
  EXPECT_EQ(back.config.dt_rank, 1u);
  ASSERT_NE(back.find("scaler.mean"), nullptr);
  EXPECT_EQ(*back.find("scaler.mean"), Tensor<float>(Shape{3}, 0.5f));
  auto restored = model_from_checkpoint<float>(back);
  std::mt19937_64 rng(57);
  auto x = testing::random_tensor_t<float>({2, 8, 3}, rng);
  EXPECT_EQ(predict(m, x), predict(restored, x));
  EXPECT_EQ(encode_checkpoint(make_checkpoint(restored, {{"scaler.mean", Tensor<float>(Shape{3}, 0.5f)}})), bytes);
}

TEST(CheckpointTest, FileRoundTripAndCorruptionDetection) {
  AttentionMambaModel<float> m(tiny_config(), 8);
  const auto path = std::filesystem::temp_directory_path() / "attnmamba_ck_test.bin";
  write_checkpoint(path, make_checkpoint(m));
  auto back = read_checkpoint(path);
  EXPECT_EQ(back.tensors.size(), m.parameters().size());
  std::filesystem::remove(path);

  auto bytes = encode_checkpoint(make_checkpoint(m));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), std::runtime_error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), std::runtime_error);
  Checkpoint missing = make_checkpoint(m);
  missing.tensors.pop_back();
  EXPECT_THROW(model_from_checkpoint<float>(missing), std::runtime_error);
}

}  // namespace
}  // namespace attnmamba
