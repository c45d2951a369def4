#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stlgsl/data_io.hpp"
#include "stlgsl/model.hpp"
#include "stlgsl/tensor.hpp"
#include "stlgsl/training.hpp"

namespace stlgsl {

struct DataSection {
  std::filesystem::path dataset;                  // STLG file, or CSV when the extension is .csv
  std::optional<std::filesystem::path> adjacency;  // `src,dst,value` edge CSV
  std::optional<std::filesystem::path> distances;  // road distances, kernelised with sigma/kappa
  double sigma = 0.0;                             // 0 picks the std of the finite distances
  double kappa = std::numeric_limits<double>::infinity();
  NanPolicy nan_policy = NanPolicy::kCarryForward;
  WindowConfig window;
};

/// Everything one run needs. JSON sections: data, model, train, eval, plus
/// top-level seed, precision and output_dir. Unknown keys are rejected.
struct RunConfig {
  DataSection data;
  ModelConfig model;  // num_nodes, num_features and generator_input_width come from the data
  TrainConfig train;
  std::vector<std::size_t> horizons = {3, 6, 12};
  std::optional<std::uint64_t> seed;
  Precision precision = Precision::f32;
  std::filesystem::path output_dir = "runs";
};

/// Parses a JSON document. Relative data paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
std::string run_config_to_json(const RunConfig& config);

/// Explicit seed, else STLGSL_SEED, else 0. Throws ConfigError on a malformed variable.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace stlgsl
