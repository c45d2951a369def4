#include "stlgsl/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "stlgsl/error.hpp"

namespace stlgsl {
namespace {

struct Accumulator {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t count = 0;
  std::size_t pct_count = 0;

  void add(double p, double y) {
    const double e = p - y;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++count;
    if (std::abs(y) >= kMapeFloor) {
      pct_sum += std::abs(e) / std::abs(y);
      ++pct_count;
    }
  }

  HorizonMetrics finish(std::size_t horizon) const {
    if (count == 0) throw DataError("every target is masked; metrics are undefined");
    HorizonMetrics m;
    m.horizon = horizon;
    m.mae = abs_sum / static_cast<double>(count);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(count));
    m.mape_percent = pct_count ? 100.0 * pct_sum / static_cast<double>(pct_count) : 0.0;
    return m;
  }
};

}  // namespace

MetricsReport compute_metrics(const Tensor& pred, const Tensor& target,
                              std::span<const std::size_t> horizons,
                              const MetricsOptions& options) {
  if (pred.shape() != target.shape() || pred.rank() != 3) {
    throw DimensionError("metrics: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t n = pred.dim(0);
  const std::size_t tout = pred.dim(1);
  const std::size_t m = pred.dim(2);
  for (std::size_t h : horizons) {
    if (h < 1 || h > tout) {
      throw ConfigError("horizon " + std::to_string(h) + " outside [1, " + std::to_string(tout) + "]");
    }
  }
  auto keep = [&](double y) { return !options.mask_nulls || y != options.null_value; };

  std::vector<Accumulator> per_step(tout);
  Accumulator all;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < tout; ++h) {
      for (std::size_t v = 0; v < m; ++v) {
        const std::size_t idx = (i * tout + h) * m + v;
        if (!keep(target[idx])) continue;
        per_step[h].add(pred[idx], target[idx]);
        all.add(pred[idx], target[idx]);
      }
    }
  }
  MetricsReport report;
  for (std::size_t h : horizons) report.horizons.push_back(per_step[h - 1].finish(h));
  report.overall = all.finish(0);
  return report;
}

void write_report_csv(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "horizon,mae,rmse,mape_percent\n" << std::setprecision(8);
  for (const auto& h : report.horizons) {
    os << h.horizon << ',' << h.mae << ',' << h.rmse << ',' << h.mape_percent << '\n';
  }
  const auto& o = report.overall;
  os << "all," << o.mae << ',' << o.rmse << ',' << o.mape_percent << '\n';
}

}  // namespace stlgsl
