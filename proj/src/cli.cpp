#include "attnmamba/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "attnmamba/eval_stats.hpp"

namespace attnmamba::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read_field(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

BidirectionalMode parse_bidirectional(const std::string& s) {
  if (s == "literal") return BidirectionalMode::kLiteral;
  if (s == "conventional") return BidirectionalMode::kConventional;
  throw ConfigError("model.bidirectional must be 'literal' or 'conventional', got '" + s + "'");
}

void parse_dataset(const json& j, const fs::path& base_dir, DatasetSpec& d) {
  check_keys(j, {"csv", "name", "delimiter", "header", "timestamp", "synthetic"}, "dataset");
  if (j.contains("csv") && j.contains("synthetic")) throw ConfigError("dataset takes either 'csv' or 'synthetic', not both");
  if (j.contains("csv")) {
    fs::path p = j.at("csv").get<std::string>();
    d.csv = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  }
  if (j.contains("name")) d.name = j.at("name").get<std::string>();
  if (j.contains("delimiter")) {
    const auto delim = j.at("delimiter").get<std::string>();
    if (delim.size() != 1) throw ConfigError("dataset.delimiter must be a single character");
    d.schema.delimiter = delim[0];
  }
  if (j.contains("header")) d.schema.header = j.at("header").get<bool>();
  if (j.contains("timestamp")) d.schema.timestamp = j.at("timestamp").get<bool>();
  if (j.contains("synthetic")) {
    try {
      d.synthetic = parse_synthetic_config(j.at("synthetic").dump());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("dataset.synthetic: ") + e.what());
    }
    d.synthetic_seed_set = j.at("synthetic").contains("seed");
  }
}

void parse_model(const json& j, ModelConfig& m) {
  check_keys(j, {"lookback", "horizon", "embed_dim", "expansion", "conv_width", "state_dim", "dt_rank", "bidirectional"},
             "model");
  read_field(j, "lookback", m.lookback);
  read_field(j, "horizon", m.horizon);
  read_field(j, "embed_dim", m.embed);
  read_field(j, "expansion", m.expansion);
  read_field(j, "conv_width", m.conv_width);
  read_field(j, "state_dim", m.state_dim);
  if (j.contains("dt_rank")) {
    const auto& v = j.at("dt_rank");
    if (v.is_string() && v.get<std::string>() == "auto") m.dt_rank = 0;
    else m.dt_rank = v.get<std::size_t>();
  }
  if (j.contains("bidirectional")) m.bidirectional = parse_bidirectional(j.at("bidirectional").get<std::string>());
}

void parse_train(const json& j, TrainRunConfig& t) {
  check_keys(j, {"lr", "epochs", "batch_size", "patience", "clip_norm", "target_train_mse"}, "train");
  read_field(j, "lr", t.lr);
  read_field(j, "epochs", t.epochs);
  read_field(j, "batch_size", t.batch_size);
  read_field(j, "patience", t.patience);
  read_field(j, "clip_norm", t.clip_norm);
  if (j.contains("target_train_mse") && !j.at("target_train_mse").is_null())
    t.target_train_mse = j.at("target_train_mse").get<double>();
  if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(t.lr >= 0)) throw ConfigError("train.lr must be >= 0");
}

void parse_bench(const json& j, BenchConfig& b) {
  check_keys(j, {"embed_dim", "batch", "variates", "warmup", "iterations"}, "bench");
  read_field(j, "embed_dim", b.embed);
  read_field(j, "batch", b.batch);
  read_field(j, "variates", b.variates);
  read_field(j, "warmup", b.warmup);
  read_field(j, "iterations", b.iterations);
  if (b.embed < 4 || b.embed % 4 != 0) throw ConfigError("bench.embed_dim (E) must be a positive multiple of 4");
  if (b.iterations < 1 || b.batch < 1 || b.variates.empty())
    throw ConfigError("bench needs iterations >= 1, batch >= 1 and a non-empty variates list");
}

void validate_model(const ModelConfig& m) {
  try {
    ModelConfig probe = m;
    probe.variates = std::max<std::size_t>(probe.variates, 1);
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the commands.

struct PreparedData {
  std::string name;
  std::vector<std::string> variate_names;
  SplitDataset split;
};

PreparedData prepare_data(const RunConfig& rc) {
  PreparedData out;
  RawSeries series;
  try {
    if (rc.dataset.csv) {
      series = load_csv(*rc.dataset.csv, rc.dataset.schema);
      out.name = rc.dataset.name.value_or(rc.dataset.csv->stem().string());
    } else {
      SyntheticConfig sc = rc.dataset.synthetic;
      if (!rc.dataset.synthetic_seed_set) sc.seed = rc.seed;
      series = generate_synthetic(sc);
      out.name = rc.dataset.name.value_or("synthetic");
    }
  } catch (const CsvError& e) {
    throw DataError(e.what());
  }
  out.variate_names = series.names;
  const SplitRatios ratios = rc.split.value_or(default_ratios(out.name));
  try {
    out.split = fit_apply_scaler(split_dataset(series, ratios, rc.model.lookback, rc.model.horizon));
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return out;
}

std::vector<NamedTensor> scaler_tensors(const Scaler& s) {
  const std::size_t n = s.mean.size();
  Tensor<float> mean(Shape{n}), stdv(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    mean[i] = static_cast<float>(s.mean[i]);
    stdv[i] = static_cast<float>(s.std[i]);
  }
  return {{"scaler.mean", std::move(mean)}, {"scaler.std", std::move(stdv)}};
}

std::optional<Scaler> scaler_from_checkpoint(const Checkpoint& ck) {
  const Tensor<float>* mean = ck.find("scaler.mean");
  const Tensor<float>* stdv = ck.find("scaler.std");
  if (!mean || !stdv) return std::nullopt;
  Scaler s;
  for (float v : mean->values()) s.mean.push_back(v);
  for (float v : stdv->values()) s.std.push_back(v);
  return s;
}

Checkpoint load_checkpoint_or_throw(const fs::path& path) {
  try {
    return read_checkpoint(path);
  } catch (const std::exception& e) {
    throw DataError("cannot read checkpoint " + path.string() + ": " + e.what());
  }
}

const WindowIndex& windows_for(const SplitDataset& ds, const std::string& split) {
  if (split == "train") return ds.train_windows;
  if (split == "val") return ds.val_windows;
  if (split == "test") return ds.test_windows;
  throw ConfigError("--split must be train, val or test, got '" + split + "'");
}

ordered_json metrics_json(const WindowMetrics& m) {
  ordered_json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["windows"] = m.windows;
  return j;
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

template <typename T>
AttentionMambaModel<T> model_for_data(const Checkpoint& ck, const SplitDataset& ds) {
  if (ck.config.variates != ds.values.dim(1)) {
    throw DataError("checkpoint expects " + std::to_string(ck.config.variates) + " variates, data has " +
                    std::to_string(ds.values.dim(1)));
  }
  return model_from_checkpoint<T>(ck);
}

// ---------------------------------------------------------------------------
// Commands.

template <typename T>
int train_impl(const RunConfig& rc) {
  PreparedData data = prepare_data(rc);
  ModelConfig mc = rc.model;
  mc.variates = data.split.values.dim(1);
  validate_model(mc);
  if (data.split.train_windows.size() == 0) throw DataError("training split has no windows");

  AttentionMambaModel<T> model(mc, rc.seed);
  TrainRunConfig tc = rc.train;
  tc.seed = rc.seed;
  spdlog::info("training on '{}' ({} variates, {} train windows, {} parameters, {})", data.name, mc.variates,
               data.split.train_windows.size(), model.parameter_count(), to_string(mc.precision));
  const TrainResult result = train(model, data.split, tc);

  fs::create_directories(rc.out);
  write_checkpoint(rc.out / "checkpoint.bin", make_checkpoint(model, scaler_tensors(*data.split.scaler)));
  write_loss_curve(rc.out / "loss_curve.csv", result.curve);

  const auto& ds = data.split;
  ordered_json j;
  j["dataset"] = data.name;
  j["lookback"] = mc.lookback;
  j["horizon"] = mc.horizon;
  j["precision"] = to_string(mc.precision);
  j["seed"] = rc.seed;
  j["parameter_count"] = model.parameter_count();
  j["epochs_run"] = result.curve.size();
  j["best_epoch"] = result.best_epoch;
  j["early_stopped"] = result.early_stopped;
  j["reached_target"] = result.reached_target;
  j["train"] = metrics_json(evaluate_windows(model, ds.values, ds.train_windows));
  j["val"] = metrics_json(evaluate_windows(model, ds.values, ds.val_windows));
  j["test"] = metrics_json(evaluate_windows(model, ds.values, ds.test_windows));
  j["persistence_test"] = metrics_json(persistence_metrics(ds.values, ds.test_windows));
  write_json(rc.out / "metrics.json", j);
  spdlog::info("test mse={} mae={} (persistence mse={})", j["test"]["mse"].dump(), j["test"]["mae"].dump(),
               j["persistence_test"]["mse"].dump());
  return kOk;
}

template <typename T>
int evaluate_impl(const RunConfig& rc, const fs::path& checkpoint, const std::string& split) {
  const Checkpoint ck = load_checkpoint_or_throw(checkpoint);
  RunConfig local = rc;
  local.model.lookback = ck.config.lookback;
  local.model.horizon = ck.config.horizon;
  PreparedData data = prepare_data(local);
  const auto model = model_for_data<T>(ck, data.split);
  const WindowIndex& w = windows_for(data.split, split);
  if (w.size() == 0) throw DataError("the " + split + " split has no windows");
  const WindowMetrics m = evaluate_windows(model, data.split.values, w);
  const MetricsReport report =
      with_average_rows({MetricRow{data.name, std::to_string(ck.config.horizon), m.mse, m.mae}});

  fs::create_directories(rc.out);
  ordered_json j;
  j["split"] = split;
  j["windows"] = m.windows;
  j["rows"] = ordered_json::array();
  for (const auto& r : report.rows)
    j["rows"].push_back(ordered_json{{"dataset", r.dataset}, {"horizon", r.horizon}, {"mse", r.mse}, {"mae", r.mae}});
  write_json(rc.out / "metrics.json", j);
  std::cout << data.name << " T=" << ck.config.horizon << " " << split << ": mse=" << m.mse << " mae=" << m.mae << '\n';
  return kOk;
}

template <typename T>
int forecast_impl(const RunConfig& rc, const fs::path& checkpoint, const fs::path& input) {
  const Checkpoint ck = load_checkpoint_or_throw(checkpoint);
  RawSeries series;
  try {
    series = load_csv(input, rc.dataset.schema);
  } catch (const CsvError& e) {
    throw DataError(e.what());
  }
  const ModelConfig& mc = ck.config;
  if (series.variates() != mc.variates) {
    throw DataError("input has " + std::to_string(series.variates()) + " variates, checkpoint expects " +
                    std::to_string(mc.variates));
  }
  if (series.timesteps() < mc.lookback) {
    throw DataError("input has " + std::to_string(series.timesteps()) + " rows, the model needs the last L = " +
                    std::to_string(mc.lookback));
  }
  const std::size_t n = mc.variates, l = mc.lookback, first = series.timesteps() - l;
  Tensor<double> window(Shape{l, n});
  std::copy(series.values.data() + first * n, series.values.data() + (first + l) * n, window.data());
  const std::optional<Scaler> scaler = scaler_from_checkpoint(ck);
  if (scaler) window = scaler->transform(window);
  else spdlog::warn("checkpoint has no scaler; forecasting in the input's units");

  Tensor<T> x(Shape{1, l, n});
  for (std::size_t i = 0; i < window.numel(); ++i) x[i] = static_cast<T>(window[i]);
  const auto model = model_from_checkpoint<T>(ck);
  const Tensor<T> pred = predict(model, x);
  Tensor<double> y(Shape{mc.horizon, n});
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = static_cast<double>(pred[i]);
  if (scaler) y = scaler->inverse(y);

  fs::create_directories(rc.out);
  RawSeries out{std::move(y), series.names, series.granularity};
  write_csv(rc.out / "forecast.csv", out);
  spdlog::info("wrote {} forecast rows to {}", mc.horizon, (rc.out / "forecast.csv").string());
  return kOk;
}

template <typename T>
int export_impl(const RunConfig& rc, const fs::path& checkpoint, const std::string& split, std::size_t index) {
  const Checkpoint ck = load_checkpoint_or_throw(checkpoint);
  RunConfig local = rc;
  local.model.lookback = ck.config.lookback;
  local.model.horizon = ck.config.horizon;
  PreparedData data = prepare_data(local);
  const auto model = model_for_data<T>(ck, data.split);
  const WindowIndex& w = windows_for(data.split, split);
  if (index >= w.size()) {
    throw ConfigError("--index " + std::to_string(index) + " is out of range for the " + split + " split (" +
                      std::to_string(w.size()) + " windows)");
  }
  Batch<T> b = gather_batch<T>(data.split.values, w, {index});
  Graph<T> g;
  ForwardResult<T> r = forward(g, model, g.constant(std::move(b.x)));
  const fs::path dir = rc.out / "attention";
  export_attention(r.trace, r.att, 0, dir);
  spdlog::info("exported attention for {} window {} to {}", split, index, dir.string());
  return kOk;
}

int rank_impl(const RunConfig& rc, const fs::path& results, const std::string& metric) {
  if (metric != "mse" && metric != "mae") throw ConfigError("--metric must be mse or mae, got '" + metric + "'");
  ScoreTable table;
  try {
    table = build_score_table(read_results_csv(results), metric == "mse" ? Metric::kMse : Metric::kMae);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  RankingReport r;
  try {
    r = friedman_rank(table.scores, true, table.models);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  fs::create_directories(rc.out);
  write_ranking_csv(rc.out / "ranking.csv", r);
  std::cout << "n=" << r.n << " conditions, k=" << r.k << " models, best=" << r.models[r.best] << '\n';
  for (std::size_t i = 0; i < r.k; ++i)
    std::cout << r.models[i] << ": rank=" << r.average_rank[i] << " z=" << r.z[i] << " p=" << r.p[i] << '\n';
  return kOk;
}

int bench_impl(const RunConfig& rc) {
  if (rc.model.precision != Precision::kFloat32) spdlog::warn("bench always runs at float32");
  BenchConfig bc = rc.bench;
  bc.seed = rc.seed;
  const BenchReport report = run_bench(bc);
  fs::create_directories(rc.out);
  write_bench_csv(rc.out / "bench.csv", report);
  for (const auto& r : report.rows) {
    std::cout << "N=" << r.variates << " " << r.block << ": " << r.median_ms << " ms/iter, peak " << r.peak_bytes
              << " B, score MACs " << r.score_macs << '\n';
  }
  for (std::size_t n : bc.variates)
    std::cout << "N=" << n << " pooled/full time " << report.time_ratio(n) << ", memory " << report.memory_ratio(n)
              << '\n';
  return kOk;
}

void setup_logging() {
  auto logger = spdlog::get("attnmamba");
  if (!logger) {
    logger = spdlog::stderr_color_mt("attnmamba");
    spdlog::set_default_logger(logger);
  }
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("ATTNMAMBA_LOG_LEVEL")) {
    const std::string s = env;
    level = spdlog::level::from_str(s);
    if (level == spdlog::level::off && s != "off") {
      level = spdlog::level::info;
      spdlog::warn("ignoring unknown ATTNMAMBA_LOG_LEVEL '{}'", s);
    }
  }
  spdlog::set_level(level);
}

struct CommonFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::string precision;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory (overrides config 'out')");
  f.seed_opt = cmd->add_option("--seed", f.seed, "random seed (overrides config 'seed')");
  cmd->add_option("--precision", f.precision, "float32 or float64 (overrides config 'precision')");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.out.empty()) rc.out = f.out;
  if (f.seed_opt && f.seed_opt->count() > 0) rc.seed = f.seed;
  if (!f.precision.empty()) {
    try {
      rc.model.precision = parse_precision(f.precision);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return rc;
}

template <typename Fn>
int with_precision(Precision p, Fn&& fn) {
  return p == Precision::kFloat64 ? fn(double{}) : fn(float{});
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  RunConfig rc;
  try {
    const json j = json::parse(json_text);
    check_keys(j, {"dataset", "model", "train", "split", "bench", "seed", "precision", "out"}, "config");
    if (j.contains("dataset")) parse_dataset(j.at("dataset"), base_dir, rc.dataset);
    if (j.contains("model")) parse_model(j.at("model"), rc.model);
    if (j.contains("train")) parse_train(j.at("train"), rc.train);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train", "val", "test"}, "split");
      SplitRatios r;
      read_field(s, "train", r.train);
      read_field(s, "val", r.val);
      read_field(s, "test", r.test);
      rc.split = r;
    }
    if (j.contains("bench")) parse_bench(j.at("bench"), rc.bench);
    read_field(j, "seed", rc.seed);
    if (j.contains("precision")) rc.model.precision = parse_precision(j.at("precision").get<std::string>());
    if (j.contains("out")) rc.out = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  validate_model(rc.model);
  rc.train.seed = rc.seed;
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

int run(int argc, const char* const* argv) {
  setup_logging();
  CLI::App app{"Attention Mamba forecasting toolkit"};
  app.require_subcommand(1);

  CommonFlags f_train, f_eval, f_fc, f_exp, f_rank, f_bench;
  std::string checkpoint, input, split = "test", results, metric = "mse";
  std::size_t index = 0;

  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint, loss curve and metrics");
  add_common(train_cmd, f_train);

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on one split of the configured data");
  add_common(eval_cmd, f_eval);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split, "train, val or test");

  auto* fc_cmd = app.add_subcommand("forecast", "forecast the horizon after the last lookback rows of a CSV");
  add_common(fc_cmd, f_fc);
  fc_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  fc_cmd->add_option("--input", input, "CSV in raw units")->required()->check(CLI::ExistingFile);

  auto* exp_cmd = app.add_subcommand("export-attention", "write Weights, Scores and Att for one window");
  add_common(exp_cmd, f_exp);
  exp_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("--split", split, "train, val or test");
  exp_cmd->add_option("--index", index, "window index within the split");

  auto* rank_cmd = app.add_subcommand("rank", "Friedman ranking with a one-vs-best post-hoc");
  add_common(rank_cmd, f_rank);
  rank_cmd->add_option("--results", results, "CSV with dataset,horizon,model,mse,mae")->required()->check(CLI::ExistingFile);
  rank_cmd->add_option("--metric", metric, "mse or mae");

  auto* bench_cmd = app.add_subcommand("bench", "time pooled attention against full softmax attention");
  add_common(bench_cmd, f_bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (train_cmd->parsed()) {
      const RunConfig rc = resolve(f_train);
      return with_precision(rc.model.precision, [&](auto t) { return train_impl<decltype(t)>(rc); });
    }
    if (eval_cmd->parsed()) {
      const RunConfig rc = resolve(f_eval);
      return with_precision(rc.model.precision,
                            [&](auto t) { return evaluate_impl<decltype(t)>(rc, checkpoint, split); });
    }
    if (fc_cmd->parsed()) {
      const RunConfig rc = resolve(f_fc);
      return with_precision(rc.model.precision, [&](auto t) { return forecast_impl<decltype(t)>(rc, checkpoint, input); });
    }
    if (exp_cmd->parsed()) {
      const RunConfig rc = resolve(f_exp);
      return with_precision(rc.model.precision,
                            [&](auto t) { return export_impl<decltype(t)>(rc, checkpoint, split, index); });
    }
    if (rank_cmd->parsed()) return rank_impl(resolve(f_rank), results, metric);
    if (bench_cmd->parsed()) return bench_impl(resolve(f_bench));
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kDataError;
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}

}  // namespace attnmamba::cli
