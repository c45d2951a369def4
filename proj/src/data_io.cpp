#include "stlgsl/data_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "stlgsl/error.hpp"

namespace stlgsl {
namespace {

constexpr std::array<char, 4> kMagic = {'S', 'T', 'L', 'G'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw DataError("truncated STLG header while reading " + what);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

// Missing readings: empty, nan, na, null.
bool is_missing(const std::string& s) {
  if (s.empty()) return true;
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return lower == "nan" || lower == "na" || lower == "null";
}

std::size_t parse_index(const std::string& s, std::size_t limit, const std::string& where) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v >= limit) {
    throw DataError(where + ": node id '" + s + "' is not in [0, " + std::to_string(limit) + ")");
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = {}) {
  std::ifstream is(path, mode);
  if (!is) throw DataError("cannot open " + path.string());
  return is;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, mode);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

}  // namespace

TrafficSeries load_dataset(const std::filesystem::path& path, NanPolicy policy) {
  auto is = open_input(path, std::ios::binary);
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError(path.string() + ": bad magic, not an STLG file");
  }
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw DataError(path.string() + ": unsupported STLG version " + std::to_string(version));
  }
  TrafficSeries series;
  series.num_nodes = read_le<std::uint32_t>(is, "node count");
  series.num_features = read_le<std::uint32_t>(is, "feature count");
  series.num_steps = read_le<std::uint64_t>(is, "step count");
  const std::size_t count = series.num_steps * series.num_nodes * series.num_features;
  if (count == 0) throw DataError(path.string() + ": empty payload");

  std::vector<char> raw(count * 4);
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size() || is.peek() != std::char_traits<char>::eof()) {
    throw DataError(path.string() + ": payload length does not equal T*M*F = " +
                    std::to_string(count) + " float32 values");
  }
  series.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
    }
    series.values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  apply_nan_policy(series, policy);
  return series;
}

void save_dataset(const TrafficSeries& series, const std::filesystem::path& path) {
  const std::size_t count = series.num_steps * series.num_nodes * series.num_features;
  if (count == 0 || series.values.size() != count) {
    throw DataError("save_dataset: series shape does not match its values");
  }
  auto os = open_output(path, std::ios::binary);
  os.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(series.num_nodes));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(series.num_features));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(series.num_steps));
  for (double v : series.values) write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw DataError("write failed for " + path.string());
}

void apply_nan_policy(TrafficSeries& series, NanPolicy policy) {
  for (std::size_t n = 0; n < series.num_nodes; ++n) {
    for (std::size_t f = 0; f < series.num_features; ++f) {
      bool any_finite = false;
      double last = 0.0;
      for (std::size_t t = 0; t < series.num_steps; ++t) {
        double& v = series.at(t, n, f);
        if (std::isfinite(v)) {
          any_finite = true;
          last = v;
        } else {
          v = policy == NanPolicy::kCarryForward ? last : 0.0;
        }
      }
      if (!any_finite) {
        throw DataError("node " + std::to_string(n) + " feature " + std::to_string(f) +
                        " has no finite readings");
      }
    }
  }
}

TrafficSeries read_series_csv(const std::filesystem::path& path, NanPolicy policy) {
  auto is = open_input(path);
  TrafficSeries series;
  series.num_features = 1;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    double probe = 0.0;
    if (first && !cells.empty() && !parse_double(cells[0], probe) && !is_missing(cells[0])) {
      first = false;
      continue;  // header
    }
    first = false;
    if (series.num_nodes == 0) series.num_nodes = cells.size();
    if (cells.size() != series.num_nodes) {
      throw DataError(path.string() + ": row " + std::to_string(series.num_steps + 1) + " has " +
                      std::to_string(cells.size()) + " columns, expected " +
                      std::to_string(series.num_nodes));
    }
    for (const auto& c : cells) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (!is_missing(c) && !parse_double(c, v)) {
        throw DataError(path.string() + ": cannot parse '" + c + "'");
      }
      series.values.push_back(v);
    }
    ++series.num_steps;
  }
  if (series.num_steps == 0) throw DataError(path.string() + ": no data rows");
  apply_nan_policy(series, policy);
  return series;
}

Tensor load_edge_csv(const std::filesystem::path& path, std::size_t num_nodes, double missing) {
  auto is = open_input(path);
  Tensor m(Shape{num_nodes, num_nodes}, missing);
  std::string line;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (row == 1 && !cells.empty() && cells[0] == "src") continue;
    const std::string where = path.string() + ":" + std::to_string(row);
    if (cells.size() != 3) throw DataError(where + ": expected src,dst,value");
    const std::size_t src = parse_index(cells[0], num_nodes, where);
    const std::size_t dst = parse_index(cells[1], num_nodes, where);
    double v = 0.0;
    if (!parse_double(cells[2], v)) throw DataError(where + ": bad value '" + cells[2] + "'");
    m(src, dst) = v;
  }
  return m;
}

void save_edge_csv(const Tensor& matrix, const std::filesystem::path& path) {
  auto os = open_output(path);
  os << "src,dst,value\n";
  os << std::setprecision(9);
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    for (std::size_t j = 0; j < matrix.cols(); ++j) {
      if (matrix(i, j) != 0.0) os << i << ',' << j << ',' << matrix(i, j) << '\n';
    }
  }
}

void save_dense_csv(const Tensor& matrix, const std::filesystem::path& path, int decimals) {
  auto os = open_output(path);
  os << std::fixed << std::setprecision(decimals);
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    for (std::size_t j = 0; j < matrix.cols(); ++j) {
      if (j) os << ',';
      os << matrix(i, j);
    }
    os << '\n';
  }
}

Tensor load_dense_csv(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols) throw DataError(path.string() + ": ragged dense CSV");
    for (const auto& c : cells) {
      double v = 0.0;
      if (!parse_double(c, v)) throw DataError(path.string() + ": cannot parse '" + c + "'");
      data.push_back(v);
    }
    ++rows;
  }
  return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor load_distance_csv(const std::filesystem::path& path, std::size_t num_nodes) {
  Tensor d = load_edge_csv(path, num_nodes, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < num_nodes; ++i) d(i, i) = 0.0;
  return d;
}

Tensor build_predefined_adjacency(const Tensor& distances, double sigma, double kappa) {
  if (distances.rank() != 2 || distances.rows() != distances.cols()) {
    throw DimensionError("distance table must be square, got " + shape_str(distances.shape()));
  }
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(kappa >= 0.0)) throw ConfigError("kappa must be non-negative");
  Tensor a(distances.shape());
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const double d = distances[i];
    if (d < 0.0 || std::isnan(d)) throw DataError("negative or NaN road distance");
    a[i] = d <= kappa ? std::exp(-(d * d) / (sigma * sigma)) : 0.0;
  }
  return a;
}

Normalizer::Normalizer(std::size_t num_nodes, std::size_t num_features, std::vector<double> means,
                       std::vector<double> stds)
    : num_nodes_(num_nodes),
      num_features_(num_features),
      means_(std::move(means)),
      stds_(std::move(stds)) {
  if (means_.size() != num_nodes * num_features || stds_.size() != means_.size()) {
    throw DimensionError("normalizer statistics do not match node/feature counts");
  }
  for (double& s : stds_) s = std::max(s, kStdFloor);
}

Normalizer Normalizer::fit(const TrafficSeries& series, std::size_t end_step) {
  if (end_step == 0 || end_step > series.num_steps) {
    throw DataError("normalizer needs a non-empty fitting range");
  }
  const std::size_t channels = series.num_nodes * series.num_features;
  std::vector<double> means(channels, 0.0);
  std::vector<double> stds(channels, 0.0);
  for (std::size_t t = 0; t < end_step; ++t) {
    for (std::size_t c = 0; c < channels; ++c) means[c] += series.values[t * channels + c];
  }
  for (double& m : means) m /= static_cast<double>(end_step);
  for (std::size_t t = 0; t < end_step; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = series.values[t * channels + c] - means[c];
      stds[c] += d * d;
    }
  }
  for (double& s : stds) s = std::sqrt(s / static_cast<double>(end_step));
  return Normalizer(series.num_nodes, series.num_features, std::move(means), std::move(stds));
}

WindowedDataset::WindowedDataset(TrafficSeries series, WindowConfig config)
    : series_(std::move(series)), config_(config) {
  const double ratio_sum = config_.train_ratio + config_.val_ratio + config_.test_ratio;
  if (config_.train_ratio < 0 || config_.val_ratio < 0 || config_.test_ratio < 0 ||
      std::abs(ratio_sum - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  if (config_.input_steps < 1 || config_.output_steps < 1 || config_.batch_size < 1) {
    throw ConfigError("input_steps, output_steps and batch_size must be >= 1");
  }
  if (config_.target_feature >= series_.num_features) {
    throw ConfigError("target feature index out of range");
  }
  const std::size_t t = series_.num_steps;
  const std::size_t span = config_.input_steps + config_.output_steps;
  train_end_ = static_cast<std::size_t>(std::llround(config_.train_ratio * static_cast<double>(t)));
  val_end_ = static_cast<std::size_t>(
      std::llround((config_.train_ratio + config_.val_ratio) * static_cast<double>(t)));
  val_end_ = std::min(val_end_, t);

  auto fill = [span](std::size_t begin, std::size_t end, std::vector<std::size_t>& out) {
    for (std::size_t s = begin; s + span <= end; ++s) out.push_back(s);
  };
  fill(0, train_end_, train_starts_);
  fill(train_end_, val_end_, val_starts_);
  fill(val_end_, t, test_starts_);
  if (train_starts_.empty()) {
    throw DataError("training split of " + std::to_string(train_end_) +
                    " steps cannot hold one window of " + std::to_string(span) + " steps");
  }
  if (val_starts_.empty()) warnings_.push_back("validation split holds no complete window");
  if (test_starts_.empty()) warnings_.push_back("test split holds no complete window");
  normalizer_ = Normalizer::fit(series_, train_end_);
}

std::pair<std::size_t, std::size_t> WindowedDataset::bounds(Split split) const {
  switch (split) {
    case Split::kTrain: return {0, train_end_};
    case Split::kVal: return {train_end_, val_end_};
    case Split::kTest: return {val_end_, series_.num_steps};
  }
  return {0, 0};
}

const std::vector<std::size_t>& WindowedDataset::starts(Split split) const {
  switch (split) {
    case Split::kTrain: return train_starts_;
    case Split::kVal: return val_starts_;
    case Split::kTest: return test_starts_;
  }
  return train_starts_;
}

WindowBatch WindowedDataset::make_batch(std::span<const std::size_t> starts) const {
  const std::size_t b = starts.size();
  const std::size_t m = series_.num_nodes;
  const std::size_t f = series_.num_features;
  const std::size_t tin = config_.input_steps;
  const std::size_t tout = config_.output_steps;
  WindowBatch batch;
  batch.inputs = Tensor(Shape{b, tin, m, f});
  batch.targets = Tensor(Shape{b, tout, m});
  batch.starts.assign(starts.begin(), starts.end());
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t s = starts[i];
    for (std::size_t t = 0; t < tin; ++t) {
      for (std::size_t n = 0; n < m; ++n) {
        for (std::size_t c = 0; c < f; ++c) {
          batch.inputs[((i * tin + t) * m + n) * f + c] =
              normalizer_.transform(series_.at(s + t, n, c), n, c);
        }
      }
    }
    for (std::size_t h = 0; h < tout; ++h) {
      for (std::size_t n = 0; n < m; ++n) {
        batch.targets[(i * tout + h) * m + n] = series_.at(s + tin + h, n, config_.target_feature);
      }
    }
  }
  return batch;
}

namespace {
std::vector<WindowBatch> chunk(const WindowedDataset& ds, const std::vector<std::size_t>& order,
                               std::size_t batch_size) {
  std::vector<WindowBatch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - i);
    out.push_back(ds.make_batch(std::span(order).subspan(i, n)));
  }
  return out;
}
}  // namespace

std::vector<WindowBatch> WindowedDataset::batches(Split split) const {
  return chunk(*this, starts(split), config_.batch_size);
}

std::vector<WindowBatch> WindowedDataset::shuffled_batches(Split split, std::uint64_t seed) const {
  std::vector<std::size_t> order = starts(split);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return chunk(*this, order, config_.batch_size);
}

Tensor WindowedDataset::generator_input() const {
  const std::size_t m = series_.num_nodes;
  const std::size_t f = config_.target_feature;
  Tensor x(Shape{m, train_end_});
  for (std::size_t n = 0; n < m; ++n) {
    for (std::size_t t = 0; t < train_end_; ++t) {
      x(n, t) = normalizer_.transform(series_.at(t, n, f), n, f);
    }
  }
  return x;
}

TrafficSeries simulate_diffusion(const Tensor& transition, std::span<const double> initial,
                                 std::span<const double> phases, std::size_t steps,
                                 const SyntheticOptions& options, std::uint64_t seed) {
  const std::size_t m = transition.rows();
  if (transition.cols() != m || initial.size() != m || phases.size() != m) {
    throw DimensionError("simulate_diffusion: inconsistent node counts");
  }
  TrafficSeries s;
  s.num_nodes = m;
  s.num_features = 1;
  s.num_steps = steps;
  s.values.assign(steps * m, 0.0);
  if (steps == 0) return s;
  std::copy(initial.begin(), initial.end(), s.values.begin());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double omega = 2.0 * std::acos(-1.0) / static_cast<double>(options.period_steps);
  for (std::size_t t = 0; t + 1 < steps; ++t) {
    const double* x = s.values.data() + t * m;
    double* next = s.values.data() + (t + 1) * m;
    for (std::size_t i = 0; i < m; ++i) {
      double mixed = 0.0;
      for (std::size_t j = 0; j < m; ++j) mixed += transition(i, j) * x[j];
      const double signal = std::sin(omega * static_cast<double>(t) + phases[i]);
      next[i] = options.graph_weight * mixed + options.signal_weight * signal;
      if (options.noise_std > 0.0) next[i] += options.noise_std * noise(rng);
    }
  }
  return s;
}

Tensor plant_regular_graph(std::size_t num_nodes, std::size_t degree, std::uint64_t seed) {
  if (num_nodes < 2) throw ConfigError("a planted graph needs at least 2 nodes");
  if (degree < 1 || degree >= num_nodes) {
    throw ConfigError("planted degree must be in [1, nodes - 1]");
  }
  std::mt19937_64 rng(seed);
  Tensor g(Shape{num_nodes, num_nodes});
  // Pairing model with restarts gives an exactly regular graph when n*k is even.
  if ((num_nodes * degree) % 2 == 0) {
    std::vector<std::size_t> stubs;
    for (std::size_t i = 0; i < num_nodes; ++i) stubs.insert(stubs.end(), degree, i);
    for (int attempt = 0; attempt < 2000; ++attempt) {
      std::shuffle(stubs.begin(), stubs.end(), rng);
      g.fill(0.0);
      bool ok = true;
      for (std::size_t p = 0; p + 1 < stubs.size() && ok; p += 2) {
        const std::size_t a = stubs[p];
        const std::size_t b = stubs[p + 1];
        if (a == b || g(a, b) != 0.0) ok = false;
        g(a, b) = g(b, a) = 1.0;
      }
      if (ok) return g;
    }
  }
  // Fallback: each node links to `degree` random peers, then symmetrise.
  g.fill(0.0);
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < num_nodes; ++i) {
    others.clear();
    for (std::size_t j = 0; j < num_nodes; ++j) {
      if (j != i) others.push_back(j);
    }
    std::shuffle(others.begin(), others.end(), rng);
    for (std::size_t k = 0; k < degree; ++k) g(i, others[k]) = g(others[k], i) = 1.0;
  }
  return g;
}

std::pair<TrafficSeries, Tensor> generate_synthetic(std::size_t num_nodes, std::size_t steps,
                                                    std::size_t degree, std::uint64_t seed,
                                                    const SyntheticOptions& options) {
  if (num_nodes < 2) throw ConfigError("synthetic data needs at least 2 nodes");
  if (steps < 200) throw ConfigError("synthetic data needs at least 200 steps");
  Tensor graph = plant_regular_graph(num_nodes, degree, seed);
  Tensor transition(graph.shape());
  for (std::size_t i = 0; i < num_nodes; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < num_nodes; ++j) rs += graph(i, j);
    for (std::size_t j = 0; j < num_nodes; ++j) transition(i, j) = rs > 0 ? graph(i, j) / rs : 0.0;
  }
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::acos(-1.0));
  std::vector<double> phases(num_nodes);
  for (double& p : phases) p = phase(rng);
  const std::vector<double> initial(num_nodes, 0.0);
  TrafficSeries series =
      simulate_diffusion(transition, initial, phases, steps, options, seed + 1);
  return {std::move(series), std::move(graph)};
}

}  // namespace stlgsl
