#include "stlgsl/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "stlgsl/error.hpp"

namespace stlgsl {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (step_size < 1) fail("step_size must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (patience > max_epochs) fail("patience must not exceed max_epochs");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) fail("lr_decay must lie in (0, 1]");
  if (!(init_lr > 0.0)) fail("init_lr must be positive");
}

namespace {

void check_loss_shapes(const Shape& pred, const Tensor& target, const Tensor* mask) {
  if (pred != target.shape()) {
    throw DimensionError("mae_loss: prediction " + shape_str(pred) + " vs target " +
                         shape_str(target.shape()));
  }
  if (shape_size(pred) == 0) throw DimensionError("mae_loss: empty slice");
  if (mask && mask->shape() != pred) {
    throw DimensionError("mae_loss: mask " + shape_str(mask->shape()) + " vs " + shape_str(pred));
  }
}

double kept_count(const Tensor& target, const Tensor* mask) {
  if (!mask) return static_cast<double>(target.size());
  double n = 0.0;
  for (double m : mask->values()) n += m != 0.0 ? 1.0 : 0.0;
  if (n == 0.0) throw DataError("mae_loss: every element is masked");
  return n;
}

Tensor null_mask(const Tensor& target, double null_value) {
  Tensor mask(target.shape(), 1.0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == null_value) mask[i] = 0.0;
  }
  return mask;
}

Tensor first_columns(const Tensor& m, std::size_t count) {
  Tensor out(Shape{m.rows(), count});
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, c);
  }
  return out;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1));
}

}  // namespace

ad::Var mae_loss(const ad::Var& pred, const Tensor& target, const Tensor* mask) {
  check_loss_shapes(pred.shape(), target, mask);
  ad::Tape& tape = *pred.tape();
  ad::Var err = ad::abs(ad::sub(pred, tape.constant(target)));
  if (!mask) return ad::mean(err);
  const double n = kept_count(target, mask);
  return ad::scale(ad::sum(ad::hadamard(err, tape.constant(*mask))), 1.0 / n);
}

double mae_loss(const Tensor& pred, const Tensor& target, const Tensor* mask) {
  check_loss_shapes(pred.shape(), target, mask);
  const double n = kept_count(target, mask);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && (*mask)[i] == 0.0) continue;
    total += std::abs(pred[i] - target[i]);
  }
  return total / n;
}

std::size_t next_task_level(std::size_t it, std::size_t step_size, std::size_t r,
                            std::size_t output_steps) {
  if (step_size > 0 && it % step_size == 0 && r < output_steps) return r + 1;
  return r;
}

Trainer::Trainer(ModelConfig model_config, ModelParams params, const ModelContext& context,
                 TrainConfig config)
    : model_config_(std::move(model_config)),
      params_(std::move(params)),
      context_(context),
      config_(config),
      adam_(AdamConfig{.lr = config.lr, .weight_decay = config.weight_decay}) {
  model_config_.validate();
  config_.validate();
  state_.r = model_config_.use_curriculum ? 1 : model_config_.output_steps;
}

StepResult Trainer::curriculum_step(const WindowBatch& batch) {
  const std::size_t tout = model_config_.output_steps;
  if (model_config_.use_curriculum) {
    state_.r = next_task_level(state_.it, config_.step_size, state_.r, tout);
  } else {
    state_.r = tout;
  }

  ad::Tape tape;
  const ForwardPass pass = forward(tape, batch.inputs, params_, model_config_, context_, true);
  const Tensor target = first_columns(to_node_major(batch.targets), state_.r);
  const ad::Var slice = ad::slice_cols(pass.prediction, 0, state_.r);
  std::optional<Tensor> mask;
  if (config_.mask_nulls) mask = null_mask(target, config_.null_value);
  const ad::Var loss = mae_loss(slice, target, mask ? &*mask : nullptr);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NumericError("training loss is " + std::to_string(value) + " at iteration " +
                       std::to_string(state_.it) + " (task level " + std::to_string(state_.r) +
                       "); try a lower learning rate");
  }

  ad::GradientMap grads = tape.backward(loss);
  auto named = params_.named_tensors();
  std::vector<Tensor*> slots;
  std::vector<Tensor> g;
  slots.reserve(named.size());
  g.reserve(named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    slots.push_back(named[i].second);
    g.push_back(std::move(grads.at(pass.params[i].id())));
  }
  adam_.step(slots, g);
  ++state_.it;
  return {value, state_.r};
}

Trainer::Result Trainer::train(const WindowedDataset& data,
                               const std::function<void(const HistoryRow&)>& on_epoch) {
  if (data.starts(Split::kVal).empty()) {
    throw DataError("validation split has no windows; provide a longer series");
  }
  Result result;
  result.best = params_;
  result.best_val_mae = state_.best_val_mae;
  const std::array<std::size_t, 0> no_horizons{};
  MetricsOptions mopts{config_.mask_nulls, config_.null_value};
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= config_.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const WindowBatch& batch :
         data.shuffled_batches(Split::kTrain, epoch_seed(config_.seed, epoch))) {
      loss_sum += curriculum_step(batch).loss;
      ++loss_count;
    }
    const SplitPredictions val = predict_split(data, Split::kVal, params_, model_config_, context_);
    const MetricsReport report = compute_metrics(val.pred, val.target, no_horizons, mopts);

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    row.val_mae = report.overall.mae;
    row.val_rmse = report.overall.rmse;
    row.val_mape = report.overall.mape_percent;
    row.lr = adam_.lr();
    row.r = state_.r;
    state_.history.push_back(row);
    if (on_epoch) on_epoch(row);

    if (!std::isfinite(row.val_mae)) {
      throw NumericError("validation MAE is not finite at epoch " + std::to_string(epoch));
    }
    if (row.val_mae < state_.best_val_mae) {
      state_.best_val_mae = row.val_mae;
      state_.best_epoch = epoch;
      result.best = params_;
      stale = 0;
    } else if (++stale > config_.patience) {
      result.stopped_early = true;
      break;
    }
    adam_.set_lr(adam_.lr() * config_.lr_decay);
  }
  result.history = state_.history;
  result.best_epoch = state_.best_epoch;
  result.best_val_mae = state_.best_val_mae;
  return result;
}

SplitPredictions predict_split(const WindowedDataset& data, Split split, const ModelParams& params,
                               const ModelConfig& config, const ModelContext& context) {
  const auto& starts = data.starts(split);
  const std::size_t m = config.num_nodes;
  const std::size_t tout = config.output_steps;
  SplitPredictions out{Tensor(Shape{starts.size(), tout, m}), Tensor(Shape{starts.size(), tout, m})};
  std::size_t offset = 0;
  for (const WindowBatch& batch : data.batches(split)) {
    const Tensor pred = predict(batch.inputs, params, config, context);
    std::copy(pred.values().begin(), pred.values().end(), out.pred.data() + offset);
    std::copy(batch.targets.values().begin(), batch.targets.values().end(),
              out.target.data() + offset);
    offset += pred.size();
  }
  return out;
}

Tensor window_mean_forecast(const Tensor& window, std::size_t output_steps) {
  if (window.rank() != 3) throw DimensionError("window_mean_forecast expects {b, T_in, M}");
  const std::size_t b = window.dim(0);
  const std::size_t tin = window.dim(1);
  const std::size_t m = window.dim(2);
  Tensor out(Shape{b, output_steps, m});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t n = 0; n < m; ++n) {
      double total = 0.0;
      for (std::size_t t = 0; t < tin; ++t) total += window[(i * tin + t) * m + n];
      const double mean = total / static_cast<double>(tin);
      for (std::size_t h = 0; h < output_steps; ++h) out[(i * output_steps + h) * m + n] = mean;
    }
  }
  return out;
}

SplitPredictions historical_average_baseline(const WindowedDataset& data, Split split) {
  const auto& starts = data.starts(split);
  const auto& series = data.series();
  const std::size_t m = series.num_nodes;
  const std::size_t tin = data.config().input_steps;
  const std::size_t tout = data.config().output_steps;
  const std::size_t f = data.config().target_feature;
  Tensor window(Shape{starts.size(), tin, m});
  Tensor target(Shape{starts.size(), tout, m});
  for (std::size_t i = 0; i < starts.size(); ++i) {
    for (std::size_t n = 0; n < m; ++n) {
      for (std::size_t t = 0; t < tin; ++t) window[(i * tin + t) * m + n] = series.at(starts[i] + t, n, f);
      for (std::size_t h = 0; h < tout; ++h) {
        target[(i * tout + h) * m + n] = series.at(starts[i] + tin + h, n, f);
      }
    }
  }
  return {window_mean_forecast(window, tout), std::move(target)};
}

std::vector<double> pre_initialize_generator(ModelParams& params, const ModelConfig& config,
                                             const ModelContext& context, std::size_t epochs,
                                             double lr) {
  if (!config.use_generator || !config.use_predefined_init || !context.predefined || epochs == 0) {
    return {};
  }
  GeneratorInitResult init = initialize_generator(std::move(params.generator), context.generator_input,
                                                  *context.predefined, epochs, lr, config.symmetrize);
  params.generator = std::move(init.params);
  return std::move(init.loss_history);
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,train_loss,val_mae,val_rmse,val_mape,lr,r\n" << std::setprecision(9);
  for (const auto& h : history) {
    os << h.epoch << ',' << h.train_loss << ',' << h.val_mae << ',' << h.val_rmse << ','
       << h.val_mape << ',' << h.lr << ',' << h.r << '\n';
  }
}

}  // namespace stlgsl
