#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stlgsl/data_io.hpp"
#include "stlgsl/model.hpp"
#include "stlgsl/run_config.hpp"
#include "stlgsl/training.hpp"

namespace stlgsl::cli {

/// Entry point for the `stlgsl` executable. Returns the process exit code.
int run(int argc, char** argv);

/// Data, adjacency and resolved model settings for one run. Held by pointer
/// because the context is referenced by trainers.
struct Experiment {
  WindowedDataset data;
  std::optional<Tensor> adjacency;
  ModelConfig model;
  ModelContext context;
};

/// Loads the dataset and adjacency named in the config and fills the
/// data-derived model fields.
std::unique_ptr<Experiment> prepare(const RunConfig& config);

/// Reads an STLG file, or a series CSV when the extension is .csv.
TrafficSeries load_series(const std::filesystem::path& path, NanPolicy policy);

struct TrainOutcome {
  Trainer::Result result;
  std::vector<double> init_history;
};

/// model_init, optional generator pre-fit, then the training loop.
TrainOutcome train_experiment(const Experiment& exp, const TrainConfig& train,
                              const std::function<void(const HistoryRow&)>& on_epoch = {});

}  // namespace stlgsl::cli
