#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "stlgsl/tensor.hpp"

namespace stlgsl {

struct HorizonMetrics {
  std::size_t horizon = 0;  // 1-based step; 0 for the all-horizon aggregate
  double mae = 0.0;
  double rmse = 0.0;
  double mape_percent = 0.0;
};

struct MetricsReport {
  std::vector<HorizonMetrics> horizons;
  HorizonMetrics overall;
};

struct MetricsOptions {
  bool mask_nulls = false;  // drop targets equal to null_value
  double null_value = 0.0;
};

inline constexpr double kMapeFloor = 1e-8;

/// pred/target are {n, T_out, M} in raw units. Horizon h scores the single
/// h-th step. MAPE ignores targets with |y| < 1e-8 and is 0 when none remain.
/// Throws ConfigError for h outside [1, T_out] and DataError when every
/// target is masked.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& target,
                              std::span<const std::size_t> horizons,
                              const MetricsOptions& options = {});

/// `horizon,mae,rmse,mape_percent`, one row per horizon and a final `all` row.
void write_report_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace stlgsl
