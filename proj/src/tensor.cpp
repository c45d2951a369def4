#include "stlgsl/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stlgsl/error.hpp"

namespace stlgsl {
namespace {

std::atomic<Precision> g_precision{Precision::f32};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix<double>>;
using ConstMatrixMap = Eigen::Map<const RowMatrix<double>>;

ConstMatrixMap view(const Tensor& t) {
  return ConstMatrixMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MatrixMap view(Tensor& t) {
  return MatrixMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename Scalar, typename A, typename B, typename Out>
void accumulate_product(const A& a, bool ta, const B& b, bool tb, Out&& out) {
  if (!ta && !tb) {
    out.noalias() += a * b;
  } else if (ta && !tb) {
    out.noalias() += a.transpose() * b;
  } else if (!ta && tb) {
    out.noalias() += a * b.transpose();
  } else {
    out.noalias() += a.transpose() * b.transpose();
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Precision precision() noexcept { return g_precision.load(std::memory_order_relaxed); }
void set_precision(Precision p) noexcept { g_precision.store(p, std::memory_order_relaxed); }

double round_to_precision(double v) noexcept {
  if (precision() == Precision::f32) return static_cast<double>(static_cast<float>(v));
  return v;
}

void round_to_precision(std::span<double> values) noexcept {
  if (precision() != Precision::f32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 1;
  return shape_size(Shape(shape_.begin(), shape_.end() - 1));
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.size() != size()) {
    throw DimensionError("cannot add " + shape_str(other.shape_) + " into " + shape_str(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor transpose(const Tensor& m) {
  Tensor out(Shape{m.cols(), m.rows()});
  view(out) = view(m).transpose();
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("max_abs_diff of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius_norm(const Tensor& a) noexcept {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

void gemm_accumulate(const double* a, std::size_t a_rows, std::size_t a_cols, bool transpose_a,
                     const double* b, std::size_t b_rows, std::size_t b_cols, bool transpose_b,
                     double* out) {
  const auto ar = static_cast<Eigen::Index>(a_rows);
  const auto ac = static_cast<Eigen::Index>(a_cols);
  const auto br = static_cast<Eigen::Index>(b_rows);
  const auto bc = static_cast<Eigen::Index>(b_cols);
  const Eigen::Index m = transpose_a ? ac : ar;
  const Eigen::Index n = transpose_b ? br : bc;
  if (m == 0 || n == 0 || (transpose_a ? ar : ac) == 0) return;
  ConstMatrixMap av(a, ar, ac);
  ConstMatrixMap bv(b, br, bc);
  MatrixMap ov(out, m, n);
  if (precision() == Precision::f64) {
    accumulate_product<double>(av, transpose_a, bv, transpose_b, ov);
    return;
  }
  const RowMatrix<float> af = av.cast<float>();
  const RowMatrix<float> bf = bv.cast<float>();
  RowMatrix<float> of = RowMatrix<float>::Zero(m, n);
  accumulate_product<float>(af, transpose_a, bf, transpose_b, of);
  ov += of.cast<double>();
}

void matmul_accumulate(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b,
                       Tensor& out) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t ka = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (ka != kb || out.rows() != m || out.cols() != n) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) +
                         (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : "") + " -> " + shape_str(out.shape()));
  }
  gemm_accumulate(a.data(), a.rows(), a.cols(), transpose_a, b.data(), b.rows(), b.cols(),
                  transpose_b, out.data());
}

Tensor matmul_values(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  Tensor out(Shape{m, n});
  matmul_accumulate(a, transpose_a, b, transpose_b, out);
  return out;
}

}  // namespace stlgsl
