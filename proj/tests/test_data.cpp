#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "attnmamba/data.hpp"
#include "test_support.hpp"

namespace attnmamba {
namespace {

namespace fs = std::filesystem;

CsvErrorKind error_kind_of(const std::string& text) {
  try {
    parse_csv(text);
  } catch (const CsvError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected CsvError for: " << text;
  return CsvErrorKind::kIo;
}

TEST(CsvTest, PlainNumericTable) {
  auto s = parse_csv("1,2\n3,4\n5,6\n");
  EXPECT_EQ(s.timesteps(), 3u);
  EXPECT_EQ(s.variates(), 2u);
  EXPECT_EQ(s.values, Tensor<double>(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(CsvTest, TimestampColumnIsDropped) {
  auto s = parse_csv("2016-07-01 00:00, 1.0, 2.0\n2016-07-01 01:00, 3.0, 4.0\n");
  EXPECT_EQ(s.variates(), 2u);
  EXPECT_EQ(s.values, Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
}

TEST(CsvTest, HeaderAndTimestampTogether) {
  auto s = parse_csv("date,OT,HUFL\r\n2016-07-01,1.5,-2\r\n2016-07-02,2.5,3e-1\r\n");
  EXPECT_EQ(s.names, (std::vector<std::string>{"OT", "HUFL"}));
  EXPECT_EQ(s.values, Tensor<double>(Shape{2, 2}, std::vector<double>{1.5, -2, 2.5, 0.3}));
}

TEST(CsvTest, DistinctErrorKinds) {
  EXPECT_EQ(error_kind_of(""), CsvErrorKind::kEmptyFile);
  EXPECT_EQ(error_kind_of("\n\n  \n"), CsvErrorKind::kEmptyFile);
  EXPECT_EQ(error_kind_of("a,b\n"), CsvErrorKind::kEmptyFile);
  EXPECT_EQ(error_kind_of("1,2\n3\n"), CsvErrorKind::kRaggedRow);
  EXPECT_EQ(error_kind_of("1,2\n3,x\n"), CsvErrorKind::kNonNumericCell);
  EXPECT_EQ(error_kind_of("1,2\n3,\n"), CsvErrorKind::kNonNumericCell);
  try {
    parse_csv("1,2\n3,4\n5,oops\n");
  } catch (const CsvError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(CsvTest, MissingFileIsIoError) {
  try {
    load_csv("/nonexistent/definitely_missing.csv");
    FAIL();
  } catch (const CsvError& e) {
    EXPECT_EQ(e.kind(), CsvErrorKind::kIo);
  }
}

TEST(CsvTest, WriteThenLoadRoundTripsExactly) {
  std::mt19937_64 rng(60);
  RawSeries s;
  s.values = testing::random_tensor({100, 5}, rng, -1e3, 1e3);
  for (int i = 0; i < 5; ++i) s.names.push_back("col" + std::to_string(i));
  const auto path = fs::temp_directory_path() / "attnmamba_roundtrip.csv";
  write_csv(path, s);
  auto back = load_csv(path);
  fs::remove(path);
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.names, s.names);
}

TEST(WindowTest, CountingExamples) {
  EXPECT_EQ(make_windows(3, 2, {0, 10}).size(), 6u);
  EXPECT_EQ(make_windows(3, 3, {0, 5}).size(), 0u);
  EXPECT_EQ(make_windows(3, 3, {4, 10}).size(), 1u);
}

TEST(WindowTest, CountFormulaPropertySweep) {
  for (std::size_t r = 0; r <= 30; ++r)
    for (std::size_t l = 1; l <= 8; ++l)
      for (std::size_t t = 1; t <= 8; ++t) {
        const std::size_t expected = r + 1 > l + t ? r + 1 - l - t : 0;
        EXPECT_EQ(make_windows(l, t, {7, 7 + r}).size(), expected) << r << " " << l << " " << t;
      }
}

TEST(WindowTest, RejectsZeroLengths) {
  EXPECT_THROW(make_windows(0, 2, {0, 10}), std::invalid_argument);
  EXPECT_THROW(make_windows(2, 0, {0, 10}), std::invalid_argument);
}

TEST(WindowTest, SamplesMatchDirectSlicing) {
  std::mt19937_64 rng(61);
  auto values = testing::random_tensor({40, 3}, rng);
  auto idx = make_windows(6, 4, {5, 40});
  ASSERT_EQ(idx.size(), 26u);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto w = window_at(values, idx, i);
    const std::size_t start = 5 + i;
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(w.x.at({t, c}), values.at({start + t, c}));
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(w.y.at({t, c}), values.at({start + 6 + t, c}));
  }
  auto batch = gather_batch<double>(values, idx, {3, 0});
  EXPECT_EQ(batch.x.shape(), (Shape{2, 6, 3}));
  EXPECT_EQ(batch.y.at({0, 0, 0}), values.at({5 + 3 + 6, 0}));
  EXPECT_EQ(batch.x.at({1, 5, 2}), values.at({5 + 5, 2}));
}

RawSeries ramp_series(std::size_t steps, std::size_t n) {
  RawSeries s;
  s.values = Tensor<double>(Shape{steps, n});
  for (std::size_t i = 0; i < s.values.numel(); ++i) s.values[i] = static_cast<double>(i / n) + 0.1 * (i % n);
  return s;
}

TEST(SplitTest, ChronologicalDisjointRanges) {
  auto ds = split_dataset(ramp_series(1000, 2), SplitRatios{}, 12, 6);
  EXPECT_EQ(ds.train.begin, 0u);
  EXPECT_EQ(ds.train.end, 700u);
  EXPECT_EQ(ds.val.begin, 700u);
  EXPECT_EQ(ds.val.end, 800u);
  EXPECT_EQ(ds.test.begin, 800u);
  EXPECT_EQ(ds.test.end, 1000u);
  EXPECT_LT(ds.train.end - 1, ds.val.begin);
  EXPECT_LT(ds.val.begin, ds.test.begin);
}

TEST(SplitTest, WindowsBelongToSplitOfLastTarget) {
  const std::size_t l = 12, t = 6;
  auto ds = split_dataset(ramp_series(1000, 2), SplitRatios{}, l, t);
  const auto last_target = [&](std::size_t start) { return start + l + t - 1; };
  for (auto s : ds.train_windows.starts) {
    EXPECT_GE(s, ds.train.begin);
    EXPECT_LT(last_target(s), ds.train.end);
  }
  for (auto s : ds.val_windows.starts) {
    EXPECT_GE(last_target(s), ds.val.begin);
    EXPECT_LT(last_target(s), ds.val.end);
  }
  for (auto s : ds.test_windows.starts) {
    EXPECT_GE(last_target(s), ds.test.begin);
    EXPECT_LT(last_target(s), ds.test.end);
  }
  EXPECT_EQ(ds.train_windows.size(), 700u - l - t + 1);
  EXPECT_EQ(ds.val_windows.size(), 100u);
  EXPECT_EQ(ds.test_windows.size(), 200u);
}

TEST(SplitTest, PemsUsesSixTwoTwo) {
  auto r = default_ratios("PEMS08");
  EXPECT_DOUBLE_EQ(r.train, 0.6);
  EXPECT_DOUBLE_EQ(r.val, 0.2);
  EXPECT_DOUBLE_EQ(default_ratios("electricity").train, 0.7);
}

TEST(SplitTest, TooShortSeriesRejected) {
  EXPECT_THROW(split_dataset(ramp_series(10, 2), SplitRatios{}, 8, 4), std::invalid_argument);
}

TEST(ScalerTest, ConstantTrainScalesToZero) {
  RawSeries s;
  s.values = Tensor<double>(Shape{50, 2}, 5.0);
  auto ds = fit_apply_scaler(split_dataset(s, SplitRatios{}, 4, 2));
  for (std::size_t t = ds.train.begin; t < ds.train.end; ++t)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(ds.values.at({t, c}), 0.0);
}

TEST(ScalerTest, InverseUndoesTransform) {
  std::mt19937_64 rng(62);
  auto x = testing::random_tensor({60, 4}, rng, -50, 80);
  auto sc = fit_scaler(x, {0, 40});
  auto back = sc.inverse(sc.transform(x));
  EXPECT_LT(testing::max_abs_diff(back, x), 1e-6);
}

TEST(ScalerTest, StatisticsMatchTwoPassOracle) {
  std::mt19937_64 rng(63);
  auto x = testing::random_tensor({80, 3}, rng, -5, 15);
  auto sc = fit_scaler(x, {0, 56});
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t t = 0; t < 56; ++t) mean += x.at({t, c});
    mean /= 56;
    double var = 0;
    for (std::size_t t = 0; t < 56; ++t) var += (x.at({t, c}) - mean) * (x.at({t, c}) - mean);
    EXPECT_NEAR(sc.mean[c], mean, 1e-12);
    EXPECT_NEAR(sc.std[c], std::sqrt(var / 56), 1e-12);
  }
}

TEST(ScalerTest, NoLeakageFromTestValues) {
  std::mt19937_64 rng(64);
  RawSeries s;
  s.values = testing::random_tensor({200, 3}, rng);
  auto a = fit_apply_scaler(split_dataset(s, SplitRatios{}, 8, 4));
  for (std::size_t t = 160; t < 200; ++t) s.values.at({t, 1}) += 1000.0;
  auto b = fit_apply_scaler(split_dataset(s, SplitRatios{}, 8, 4));
  EXPECT_EQ(a.scaler->mean, b.scaler->mean);
  EXPECT_EQ(a.scaler->std, b.scaler->std);
}

TEST(SyntheticTest, SeededAndConfigurable) {
  auto cfg = parse_synthetic_config(R"({"n_variates": 3, "timesteps": 50, "frequencies": [0.1], "noise_std": 0.0, "seed": 5})");
  EXPECT_EQ(cfg.n_variates, 3u);
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.values.shape(), (Shape{50, 3}));
  // Pure sinusoid with period 10: x[t] == x[t + 10].
  for (std::size_t t = 0; t + 10 < 50; ++t) EXPECT_NEAR(a.values.at({t, 0}), a.values.at({t + 10, 0}), 1e-9);
  cfg.seed = 6;
  EXPECT_NE(generate_synthetic(cfg).values, a.values);
  EXPECT_THROW(parse_synthetic_config(R"({"n_variate": 3})"), std::invalid_argument);
}

TEST(ShuffleTest, DeterministicPermutation) {
  auto a = shuffled_indices(100, 2024);
  EXPECT_EQ(a, shuffled_indices(100, 2024));
  EXPECT_NE(a, shuffled_indices(100, 2025));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

}  // namespace
}  // namespace attnmamba
