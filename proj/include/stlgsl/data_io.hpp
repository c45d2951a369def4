#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stlgsl/tensor.hpp"

namespace stlgsl {

enum class NanPolicy { kCarryForward, kZeroFill };

/// Multivariate sensor recording, values laid out [time][node][feature].
struct TrafficSeries {
  std::size_t num_nodes = 0;
  std::size_t num_features = 0;
  std::size_t num_steps = 0;
  std::size_t interval_minutes = 5;
  std::vector<double> values;

  double at(std::size_t t, std::size_t node, std::size_t feature) const {
    return values[(t * num_nodes + node) * num_features + feature];
  }
  double& at(std::size_t t, std::size_t node, std::size_t feature) {
    return values[(t * num_nodes + node) * num_features + feature];
  }
};

// STLG binary: "STLG", u32 version (1), u32 M, u32 F, u64 T, then T*M*F
// little-endian float32 values in [t][node][feature] order.
TrafficSeries load_dataset(const std::filesystem::path& path,
                           NanPolicy policy = NanPolicy::kCarryForward);
void save_dataset(const TrafficSeries& series, const std::filesystem::path& path);

/// Replaces non-finite cells in place. Throws DataError for a node whose
/// values are all non-finite.
void apply_nan_policy(TrafficSeries& series, NanPolicy policy);

/// Plain CSV with one row per time step and one column per node. A header
/// row is skipped when its first cell is not numeric; empty cells and "nan"
/// read as NaN.
TrafficSeries read_series_csv(const std::filesystem::path& path,
                              NanPolicy policy = NanPolicy::kCarryForward);

/// Sparse `src,dst,value` CSV into a dense n x n matrix; unlisted pairs
/// take `missing`.
Tensor load_edge_csv(const std::filesystem::path& path, std::size_t num_nodes,
                     double missing = 0.0);
/// Writes the nonzero off-diagonal and diagonal entries as `src,dst,value`.
void save_edge_csv(const Tensor& matrix, const std::filesystem::path& path);

/// Dense matrix CSV with fixed decimal places, no header.
void save_dense_csv(const Tensor& matrix, const std::filesystem::path& path, int decimals = 6);
Tensor load_dense_csv(const std::filesystem::path& path);

/// Road distances (unlisted pairs are unreachable, i.e. +inf) into the
/// thresholded Gaussian kernel exp(-d^2 / sigma^2) for d <= kappa.
Tensor load_distance_csv(const std::filesystem::path& path, std::size_t num_nodes);
Tensor build_predefined_adjacency(const Tensor& distances, double sigma, double kappa);

/// Per-node, per-feature z-score fitted on a prefix of the series.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::size_t num_nodes, std::size_t num_features, std::vector<double> means,
             std::vector<double> stds);

  static Normalizer fit(const TrafficSeries& series, std::size_t end_step);

  double transform(double v, std::size_t node, std::size_t feature) const {
    const std::size_t i = node * num_features_ + feature;
    return (v - means_[i]) / stds_[i];
  }
  double inverse(double z, std::size_t node, std::size_t feature) const {
    const std::size_t i = node * num_features_ + feature;
    return z * stds_[i] + means_[i];
  }
  double mean(std::size_t node, std::size_t feature) const {
    return means_[node * num_features_ + feature];
  }
  double stddev(std::size_t node, std::size_t feature) const {
    return stds_[node * num_features_ + feature];
  }
  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_features() const noexcept { return num_features_; }

  static constexpr double kStdFloor = 1e-8;

 private:
  std::size_t num_nodes_ = 0;
  std::size_t num_features_ = 0;
  std::vector<double> means_;
  std::vector<double> stds_;
};

/// inputs {b, T_in, M, F} z-scored; targets {b, T_out, M} raw units.
struct WindowBatch {
  Tensor inputs;
  Tensor targets;
  std::vector<std::size_t> starts;

  std::size_t size() const noexcept { return starts.size(); }
};

enum class Split { kTrain, kVal, kTest };

struct WindowConfig {
  double train_ratio = 0.7;
  double val_ratio = 0.2;
  double test_ratio = 0.1;
  std::size_t input_steps = 12;
  std::size_t output_steps = 12;
  std::size_t batch_size = 64;
  std::size_t target_feature = 0;
};

/// Chronological train/val/test split with sliding windows that never cross
/// a split boundary.
class WindowedDataset {
 public:
  WindowedDataset(TrafficSeries series, WindowConfig config);

  const TrafficSeries& series() const noexcept { return series_; }
  const WindowConfig& config() const noexcept { return config_; }
  const Normalizer& normalizer() const noexcept { return normalizer_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// [begin, end) time steps of a split.
  std::pair<std::size_t, std::size_t> bounds(Split split) const;
  /// Valid window start indices of a split, ascending.
  const std::vector<std::size_t>& starts(Split split) const;

  WindowBatch make_batch(std::span<const std::size_t> starts) const;
  /// Every window of the split in batches. A seed shuffles the order.
  std::vector<WindowBatch> batches(Split split) const;
  std::vector<WindowBatch> shuffled_batches(Split split, std::uint64_t seed) const;

  /// Target channel of the training split, z-scored, as {M, T_train}.
  Tensor generator_input() const;

 private:
  TrafficSeries series_;
  WindowConfig config_;
  Normalizer normalizer_;
  std::size_t train_end_ = 0;
  std::size_t val_end_ = 0;
  std::vector<std::size_t> train_starts_;
  std::vector<std::size_t> val_starts_;
  std::vector<std::size_t> test_starts_;
  std::vector<std::string> warnings_;
};

struct SyntheticOptions {
  double graph_weight = 0.6;
  double signal_weight = 0.3;
  double noise_std = 0.01;
  std::size_t period_steps = 288;
};

/// x_{t+1} = graph_weight * P x_t + signal_weight * s(t) + eps, with s a per-node
/// sinusoid of the given period and phases, eps ~ N(0, noise_std^2).
TrafficSeries simulate_diffusion(const Tensor& transition, std::span<const double> initial,
                                 std::span<const double> phases, std::size_t steps,
                                 const SyntheticOptions& options, std::uint64_t seed);

/// Random symmetric graph where every node has about `degree` neighbours,
/// zero diagonal, 0/1 weights.
Tensor plant_regular_graph(std::size_t num_nodes, std::size_t degree, std::uint64_t seed);

/// Planted-graph dataset: returns the series and its 0/1 adjacency.
std::pair<TrafficSeries, Tensor> generate_synthetic(std::size_t num_nodes, std::size_t steps,
                                                    std::size_t degree, std::uint64_t seed,
                                                    const SyntheticOptions& options = {});

}  // namespace stlgsl
