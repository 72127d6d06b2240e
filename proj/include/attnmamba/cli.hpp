#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "attnmamba/bench.hpp"
#include "attnmamba/data.hpp"
#include "attnmamba/model.hpp"
#include "attnmamba/training.hpp"

namespace attnmamba::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kDiverged = 4 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::optional<std::filesystem::path> csv;  // unset -> synthetic
  CsvSchema schema;
  std::optional<std::string> name;  // defaults to the CSV stem or "synthetic"
  SyntheticConfig synthetic;
  bool synthetic_seed_set = false;  // otherwise follows the run seed
};

/// Everything one command needs; see README for the JSON schema.
struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;  // variates comes from the data
  TrainRunConfig train;
  std::optional<SplitRatios> split;
  BenchConfig bench;
  std::uint64_t seed = 2024;
  std::filesystem::path out = "attnmamba_out";
};

// Relative dataset paths resolve against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Full command line including the program name. Returns an ExitCode.
int run(int argc, const char* const* argv);

}  // namespace attnmamba::cli
