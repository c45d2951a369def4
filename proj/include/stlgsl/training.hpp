#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "stlgsl/autodiff.hpp"
#include "stlgsl/data_io.hpp"
#include "stlgsl/metrics.hpp"
#include "stlgsl/model.hpp"
#include "stlgsl/optim.hpp"

namespace stlgsl {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t step_size = 100;    // curriculum: iterations per task-level increase
  std::size_t max_epochs = 1000;
  std::size_t patience = 100;     // early-stop tolerance in epochs
  double lr_decay = 0.97;         // multiplied into lr after every epoch
  std::size_t init_epochs = 1000; // generator pre-fit to the pre-defined graph
  double init_lr = 1e-3;
  bool mask_nulls = false;
  double null_value = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_mape = 0.0;
  double lr = 0.0;
  std::size_t r = 1;
};

struct TrainState {
  std::size_t it = 1;  // next iteration number, starting at 1
  std::size_t r = 1;   // task level: number of horizons in the loss
  std::size_t best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<HistoryRow> history;
};

/// Mean absolute error over unmasked elements. mask (same shape, 1 keeps)
/// may be null. Throws DimensionError on empty or mismatched input.
ad::Var mae_loss(const ad::Var& pred, const Tensor& target, const Tensor* mask = nullptr);
double mae_loss(const Tensor& pred, const Tensor& target, const Tensor* mask = nullptr);

/// Task level after the guard of iteration `it`: r + 1 when it % s == 0 and
/// r < T_out, otherwise r.
std::size_t next_task_level(std::size_t it, std::size_t step_size, std::size_t r,
                            std::size_t output_steps);

struct StepResult {
  double loss = 0.0;
  std::size_t r = 1;
};

/// Owns the model, its optimizer and the curriculum state.
class Trainer {
 public:
  Trainer(ModelConfig model_config, ModelParams params, const ModelContext& context,
          TrainConfig config);

  /// One iteration: advance the task level, score the first r horizons,
  /// take an Adam step, it += 1. Throws NumericError on a non-finite loss.
  StepResult curriculum_step(const WindowBatch& batch);

  const TrainState& state() const noexcept { return state_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }
  const ModelConfig& model_config() const noexcept { return model_config_; }
  Adam& optimizer() noexcept { return adam_; }

  struct Result {
    ModelParams best;
    std::vector<HistoryRow> history;
    std::size_t best_epoch = 0;
    double best_val_mae = 0.0;
    bool stopped_early = false;
  };

  /// Epoch loop with per-epoch validation on all horizons, best-checkpoint
  /// tracking, lr decay and early stopping. `on_epoch` sees each history row.
  Result train(const WindowedDataset& data,
               const std::function<void(const HistoryRow&)>& on_epoch = {});

 private:
  ModelConfig model_config_;
  ModelParams params_;
  const ModelContext& context_;
  TrainConfig config_;
  Adam adam_;
  TrainState state_;
};

/// Predictions and raw targets for every window of a split, {n, T_out, M}.
struct SplitPredictions {
  Tensor pred;
  Tensor target;
};

SplitPredictions predict_split(const WindowedDataset& data, Split split, const ModelParams& params,
                               const ModelConfig& config, const ModelContext& context);

/// Input-window mean per node, repeated for every horizon. window is {b, T_in, M}.
Tensor window_mean_forecast(const Tensor& window, std::size_t output_steps);

/// Historical-average baseline over a split, read from raw (un-normalised) values.
SplitPredictions historical_average_baseline(const WindowedDataset& data, Split split);

/// Generator pre-fit to the context's pre-defined adjacency when the config asks
/// for it. Returns the loss history (empty when skipped).
std::vector<double> pre_initialize_generator(ModelParams& params, const ModelConfig& config,
                                             const ModelContext& context, std::size_t epochs,
                                             double lr);

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

}  // namespace stlgsl
