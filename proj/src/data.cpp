#include "attnmamba/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace attnmamba {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_line(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(delim, pos);
    if (next == std::string_view::npos) {
      cells.push_back(line.substr(pos));
      break;
    }
    cells.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return cells;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

RawSeries parse_csv(const std::string& text, const CsvSchema& schema) {
  struct Line {
    std::size_t number;
    std::string_view text;
  };
  std::vector<Line> lines;
  {
    std::string_view rest(text);
    std::size_t number = 0;
    while (!rest.empty()) {
      const std::size_t nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      rest = nl == std::string_view::npos ? std::string_view() : rest.substr(nl + 1);
      ++number;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (trim(line).empty()) continue;
      lines.push_back({number, line});
    }
  }
  if (lines.empty()) throw CsvError(CsvErrorKind::kEmptyFile, 0, "CSV is empty");

  const auto first = split_line(lines.front().text, schema.delimiter);
  bool header = false;
  if (schema.header) {
    header = *schema.header;
  } else {
    for (std::size_t i = 1; i < first.size() && !header; ++i) header = !parse_number(first[i]);
    if (first.size() == 1) header = !parse_number(first[0]);
  }
  const std::size_t data_begin = header ? 1 : 0;
  if (lines.size() <= data_begin) throw CsvError(CsvErrorKind::kEmptyFile, 0, "CSV has a header but no data rows");

  const auto probe = split_line(lines[data_begin].text, schema.delimiter);
  const bool timestamp = schema.timestamp ? *schema.timestamp : (probe.size() > 1 && !parse_number(probe[0]));
  const std::size_t skip = timestamp ? 1 : 0;
  const std::size_t width = probe.size();
  if (width <= skip) throw CsvError(CsvErrorKind::kEmptyFile, lines[data_begin].number, "CSV has no value columns");

  RawSeries out;
  if (header) {
    if (first.size() != width) {
      throw CsvError(CsvErrorKind::kRaggedRow, lines.front().number,
                     "header has " + std::to_string(first.size()) + " cells, data rows have " + std::to_string(width));
    }
    for (std::size_t i = skip; i < width; ++i) out.names.emplace_back(trim(first[i]));
  } else {
    for (std::size_t i = skip; i < width; ++i) out.names.push_back("v" + std::to_string(i - skip));
  }

  const std::size_t rows = lines.size() - data_begin, cols = width - skip;
  std::vector<double> values;
  values.reserve(rows * cols);
  for (std::size_t r = data_begin; r < lines.size(); ++r) {
    const auto cells = split_line(lines[r].text, schema.delimiter);
    if (cells.size() != width) {
      throw CsvError(CsvErrorKind::kRaggedRow, lines[r].number,
                     "line " + std::to_string(lines[r].number) + " has " + std::to_string(cells.size()) +
                         " cells, expected " + std::to_string(width));
    }
    for (std::size_t c = skip; c < width; ++c) {
      auto v = parse_number(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw CsvError(CsvErrorKind::kNonNumericCell, lines[r].number,
                       "line " + std::to_string(lines[r].number) + ", column " + std::to_string(c + 1) +
                           ": non-numeric cell '" + std::string(trim(cells[c])) + "'");
      }
      values.push_back(*v);
    }
  }
  out.values = Tensor<double>(Shape{rows, cols}, std::move(values));
  return out;
}

RawSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError(CsvErrorKind::kIo, 0, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RawSeries s = parse_csv(buf.str(), schema);
  s.granularity = path.stem().string();
  return s;
}

void write_csv(const std::filesystem::path& path, const RawSeries& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CsvError(CsvErrorKind::kIo, 0, "cannot open " + path.string() + " for writing");
  const std::size_t n = series.variates();
  for (std::size_t c = 0; c < n; ++c) out << (c ? "," : "") << (c < series.names.size() ? series.names[c] : "v" + std::to_string(c));
  out << '\n';
  for (std::size_t t = 0; t < series.timesteps(); ++t) {
    for (std::size_t c = 0; c < n; ++c) out << (c ? "," : "") << format_double(series.values[t * n + c]);
    out << '\n';
  }
  if (!out) throw CsvError(CsvErrorKind::kIo, 0, "failed writing " + path.string());
}

WindowIndex make_windows(std::size_t lookback, std::size_t horizon, IndexRange range) {
  if (lookback < 1 || horizon < 1) throw std::invalid_argument("make_windows: L and T must be >= 1");
  WindowIndex idx;
  idx.lookback = lookback;
  idx.horizon = horizon;
  const std::size_t span = lookback + horizon;
  if (range.size() < span) {
    spdlog::info("range [{}, {}) of length {} is shorter than L + T = {}; no windows", range.begin, range.end,
                 range.size(), span);
    return idx;
  }
  for (std::size_t s = range.begin; s + span <= range.end; ++s) idx.starts.push_back(s);
  return idx;
}

WindowSample window_at(const Tensor<double>& values, const WindowIndex& index, std::size_t i) {
  const std::size_t n = values.dim(1), start = index.starts.at(i);
  const double* base = values.data() + start * n;
  WindowSample w{Tensor<double>(Shape{index.lookback, n}), Tensor<double>(Shape{index.horizon, n})};
  std::copy(base, base + index.lookback * n, w.x.data());
  std::copy(base + index.lookback * n, base + (index.lookback + index.horizon) * n, w.y.data());
  return w;
}

template <typename T>
Batch<T> gather_batch(const Tensor<double>& values, const WindowIndex& index, const std::vector<std::size_t>& picks) {
  if (picks.empty()) throw std::invalid_argument("gather_batch: empty batch");
  const std::size_t n = values.dim(1), l = index.lookback, h = index.horizon;
  Batch<T> b{Tensor<T>(Shape{picks.size(), l, n}), Tensor<T>(Shape{picks.size(), h, n})};
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const double* base = values.data() + index.starts.at(picks[i]) * n;
    std::transform(base, base + l * n, b.x.data() + i * l * n, [](double v) { return static_cast<T>(v); });
    std::transform(base + l * n, base + (l + h) * n, b.y.data() + i * h * n, [](double v) { return static_cast<T>(v); });
  }
  return b;
}

template Batch<float> gather_batch(const Tensor<double>&, const WindowIndex&, const std::vector<std::size_t>&);
template Batch<double> gather_batch(const Tensor<double>&, const WindowIndex&, const std::vector<std::size_t>&);

SplitRatios default_ratios(const std::string& dataset_name) {
  std::string lower(dataset_name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower.find("pems") != std::string::npos) return {0.6, 0.2, 0.2};
  return {};
}

Tensor<double> Scaler::transform(const Tensor<double>& x) const {
  const std::size_t n = mean.size();
  if (x.empty() || x.shape().back() != n) throw ShapeError("scaler expects last axis " + std::to_string(n));
  Tensor<double> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = (x[i] - mean[i % n]) / std[i % n];
  return out;
}

Tensor<double> Scaler::inverse(const Tensor<double>& x) const {
  const std::size_t n = mean.size();
  if (x.empty() || x.shape().back() != n) throw ShapeError("scaler expects last axis " + std::to_string(n));
  Tensor<double> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * std[i % n] + mean[i % n];
  return out;
}

Scaler fit_scaler(const Tensor<double>& values, IndexRange rows) {
  if (rows.size() == 0) throw std::invalid_argument("fit_scaler: empty training range");
  const std::size_t n = values.dim(1);
  Scaler s{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t t = rows.begin; t < rows.end; ++t)
    for (std::size_t c = 0; c < n; ++c) s.mean[c] += values[t * n + c];
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  for (std::size_t t = rows.begin; t < rows.end; ++t)
    for (std::size_t c = 0; c < n; ++c) {
      const double d = values[t * n + c] - s.mean[c];
      s.std[c] += d * d;
    }
  for (std::size_t c = 0; c < n; ++c) {
    s.std[c] = std::sqrt(s.std[c] / static_cast<double>(rows.size()));
    if (s.std[c] < 1e-8) {
      spdlog::warn("variate {} has zero variance over the training range; using unit scale", c);
      s.std[c] = 1.0;
    }
  }
  return s;
}

SplitDataset split_dataset(const RawSeries& series, const SplitRatios& ratios, std::size_t lookback,
                           std::size_t horizon) {
  const std::size_t total = series.timesteps();
  if (total < lookback + horizon) {
    throw std::invalid_argument("series has " + std::to_string(total) + " timesteps, fewer than L + T = " +
                                std::to_string(lookback + horizon));
  }
  if (ratios.train <= 0 || ratios.val < 0 || ratios.test < 0 || ratios.train + ratios.val + ratios.test > 1.0 + 1e-9) {
    throw std::invalid_argument("split ratios must be non-negative with a positive train share and sum <= 1");
  }
  const std::size_t n_train = static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratios.train));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratios.test));
  const std::size_t n_val = total - n_train - n_test;

  SplitDataset ds;
  ds.values = series.values;
  ds.train = {0, n_train};
  ds.val = {n_train, n_train + n_val};
  ds.test = {n_train + n_val, total};
  const std::size_t reach = lookback + horizon - 1;
  const auto extended = [&](IndexRange r) {
    if (r.size() == 0) return r;
    return IndexRange{r.begin >= reach ? r.begin - reach : 0, r.end};
  };
  ds.train_windows = make_windows(lookback, horizon, ds.train);
  ds.val_windows = make_windows(lookback, horizon, extended(ds.val));
  ds.test_windows = make_windows(lookback, horizon, extended(ds.test));
  return ds;
}

SplitDataset fit_apply_scaler(SplitDataset ds) {
  if (ds.scaler) throw std::logic_error("dataset is already scaled");
  ds.scaler = fit_scaler(ds.values, ds.train);
  ds.values = ds.scaler->transform(ds.values);
  return ds;
}

SyntheticConfig parse_synthetic_config(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  SyntheticConfig cfg;
  for (const auto& [key, _] : j.items()) {
    if (key != "n_variates" && key != "timesteps" && key != "frequencies" && key != "noise_std" && key != "seed") {
      throw std::invalid_argument("unknown synthetic config key '" + key + "'");
    }
  }
  if (j.contains("n_variates")) cfg.n_variates = j.at("n_variates").get<std::size_t>();
  if (j.contains("timesteps")) cfg.timesteps = j.at("timesteps").get<std::size_t>();
  if (j.contains("frequencies")) cfg.frequencies = j.at("frequencies").get<std::vector<double>>();
  if (j.contains("noise_std")) cfg.noise_std = j.at("noise_std").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (cfg.n_variates < 1 || cfg.timesteps < 1) throw std::invalid_argument("n_variates and timesteps must be >= 1");
  if (cfg.frequencies.empty()) throw std::invalid_argument("frequencies must be non-empty");
  if (cfg.noise_std < 0) throw std::invalid_argument("noise_std must be >= 0");
  return cfg;
}

RawSeries generate_synthetic(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = cfg.n_variates, k = cfg.frequencies.size();
  std::vector<double> a(n * k), p(n * k);
  for (std::size_t i = 0; i < n * k; ++i) {
    a[i] = amp(rng);
    p[i] = phase(rng);
  }
  RawSeries s;
  s.values = Tensor<double>(Shape{cfg.timesteps, n});
  for (std::size_t t = 0; t < cfg.timesteps; ++t)
    for (std::size_t c = 0; c < n; ++c) {
      double v = 0;
      for (std::size_t f = 0; f < k; ++f)
        v += a[c * k + f] * std::sin(2.0 * std::numbers::pi * cfg.frequencies[f] * static_cast<double>(t) + p[c * k + f]);
      s.values[t * n + c] = v + cfg.noise_std * noise(rng);
    }
  for (std::size_t c = 0; c < n; ++c) s.names.push_back("s" + std::to_string(c));
  s.granularity = "synthetic";
  return s;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates so the order does not depend on the standard
  // library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace attnmamba
