#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <variant>

#include "attnmamba/cli.hpp"
#include "attnmamba/eval_stats.hpp"
#include "attnmamba/mamba.hpp"
#include "attnmamba/model.hpp"

namespace py = pybind11;
using namespace attnmamba;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const DoubleArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<double> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  double* dst = out.mutable_data();
  for (std::size_t i = 0; i < t.numel(); ++i) dst[i] = static_cast<double>(t[i]);
  return out;
}

PoolMode parse_mode(const std::string& m) {
  if (m == "avg" || m == "average") return PoolMode::kAverage;
  if (m == "max") return PoolMode::kMax;
  throw py::value_error("mode must be 'avg' or 'max'");
}

py::dict ranking_dict(const RankingReport& r) {
  py::dict d;
  d["models"] = r.models;
  d["average_rank"] = r.average_rank;
  d["z"] = r.z;
  d["p"] = r.p;
  d["p_bonferroni"] = r.p_bonferroni;
  d["n"] = r.n;
  d["k"] = r.k;
  d["best"] = r.best;
  return d;
}

// Model at either precision behind one Python class.
class PyModel {
 public:
  PyModel(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.precision == Precision::kFloat64) model_ = AttentionMambaModel<double>(cfg, seed);
    else model_ = AttentionMambaModel<float>(cfg, seed);
  }
  explicit PyModel(std::variant<AttentionMambaModel<float>, AttentionMambaModel<double>> m) : model_(std::move(m)) {}

  static PyModel load(const std::filesystem::path& path, const std::string& precision) {
    const Checkpoint ck = read_checkpoint(path);
    if (parse_precision(precision) == Precision::kFloat64) return PyModel(model_from_checkpoint<double>(ck));
    return PyModel(model_from_checkpoint<float>(ck));
  }

  ModelConfig config() const {
    return std::visit([](const auto& m) { return m.config; }, model_);
  }
  std::size_t parameter_count() const {
    return std::visit([](const auto& m) { return m.parameter_count(); }, model_);
  }

  py::array_t<double> predict(const DoubleArray& x) const {
    const Tensor<double> xt = to_tensor(x);
    return std::visit(
        [&](const auto& m) {
          using T = typename std::decay_t<decltype(m.revin.gamma)>::value_type;
          return to_array(attnmamba::predict(m, xt.template cast<T>()));
        },
        model_);
  }

  py::dict attention(const DoubleArray& x) const {
    const Tensor<double> xt = to_tensor(x);
    return std::visit(
        [&](const auto& m) {
          using T = typename std::decay_t<decltype(m.revin.gamma)>::value_type;
          Graph<T> g;
          auto r = forward(g, m, g.constant(xt.template cast<T>()));
          py::dict d;
          d["prediction"] = to_array(r.prediction.value());
          d["weights"] = to_array(r.trace.weights);
          d["scores"] = to_array(r.trace.scores);
          d["value"] = to_array(r.value);
          d["att"] = to_array(r.att);
          return d;
        },
        model_);
  }

  void save(const std::filesystem::path& path) {
    std::visit([&](auto& m) { write_checkpoint(path, make_checkpoint(m)); }, model_);
  }

 private:
  std::variant<AttentionMambaModel<float>, AttentionMambaModel<double>> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attention Mamba forecasting toolkit";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  py::enum_<BidirectionalMode>(m, "BidirectionalMode")
      .value("literal", BidirectionalMode::kLiteral)
      .value("conventional", BidirectionalMode::kConventional);
  py::enum_<Precision>(m, "Precision").value("float32", Precision::kFloat32).value("float64", Precision::kFloat64);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("variates", &ModelConfig::variates)
      .def_readwrite("lookback", &ModelConfig::lookback)
      .def_readwrite("horizon", &ModelConfig::horizon)
      .def_readwrite("embed", &ModelConfig::embed)
      .def_readwrite("expansion", &ModelConfig::expansion)
      .def_readwrite("conv_width", &ModelConfig::conv_width)
      .def_readwrite("state_dim", &ModelConfig::state_dim)
      .def_readwrite("dt_rank", &ModelConfig::dt_rank)
      .def_readwrite("bidirectional", &ModelConfig::bidirectional)
      .def_readwrite("precision", &ModelConfig::precision)
      .def("validate", &ModelConfig::validate);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 2024)
      .def_static("load", &PyModel::load, py::arg("path"), py::arg("precision") = "float32")
      .def_property_readonly("config", &PyModel::config)
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def("predict", &PyModel::predict, py::arg("x"), "x[B, L, N] -> forecast[B, T, N]")
      .def("attention", &PyModel::attention, py::arg("x"))
      .def("save", &PyModel::save, py::arg("path"));

  m.def(
      "adaptive_pool_1d",
      [](const DoubleArray& x, std::size_t target, const std::string& mode) {
        Graph<double> g;
        return to_array(adaptive_pool_1d(g.constant(to_tensor(x)), target, parse_mode(mode)).value());
      },
      py::arg("x"), py::arg("target"), py::arg("mode") = "avg", "Adaptive pooling over the last axis.");

  m.def(
      "fuse_pool",
      [](const DoubleArray& x, std::size_t target) {
        Graph<double> g;
        return to_array(fuse_pool(g.constant(to_tensor(x)), target).value());
      },
      py::arg("x"), py::arg("target"));

  m.def(
      "selective_scan",
      [](const DoubleArray& u, const DoubleArray& delta, const DoubleArray& a, const DoubleArray& b,
         const DoubleArray& c, const DoubleArray& d) {
        Graph<double> g;
        return to_array(selective_scan(g.constant(to_tensor(u)), g.constant(to_tensor(delta)), g.constant(to_tensor(a)),
                                       g.constant(to_tensor(b)), g.constant(to_tensor(c)), g.constant(to_tensor(d)))
                            .value());
      },
      py::arg("u"), py::arg("delta"), py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"),
      "u, delta [B, C, L]; a [C, S]; b, c [B, L, S]; d [C].");

  m.def(
      "friedman_rank",
      [](const std::vector<std::vector<double>>& table, bool lower_is_better, std::vector<std::string> models) {
        return ranking_dict(friedman_rank(table, lower_is_better, std::move(models)));
      },
      py::arg("table"), py::arg("lower_is_better") = true, py::arg("models") = std::vector<std::string>{});

  m.def(
      "posthoc_from_ranks",
      [](std::vector<double> ranks, std::size_t n, std::vector<std::string> models) {
        return ranking_dict(posthoc_from_ranks(std::move(ranks), n, std::move(models)));
      },
      py::arg("average_rank"), py::arg("n"), py::arg("models") = std::vector<std::string>{});

  m.def(
      "generate_synthetic",
      [](std::size_t n_variates, std::size_t timesteps, std::vector<double> frequencies, double noise_std,
         std::uint64_t seed) {
        SyntheticConfig cfg;
        cfg.n_variates = n_variates;
        cfg.timesteps = timesteps;
        cfg.frequencies = std::move(frequencies);
        cfg.noise_std = noise_std;
        cfg.seed = seed;
        return to_array(generate_synthetic(cfg).values);
      },
      py::arg("n_variates") = 8, py::arg("timesteps") = 2000, py::arg("frequencies") = std::vector<double>{1.0 / 24, 1.0 / 96},
      py::arg("noise_std") = 0.05, py::arg("seed") = 2024);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "attnmamba");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs one CLI command in-process and returns its exit code.");
}
