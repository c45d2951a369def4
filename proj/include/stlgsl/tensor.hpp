#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace stlgsl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

// Arithmetic precision is a process-wide setting. In f32 mode the heavy
// matrix products run in single precision and every recorded op output is
// rounded to the nearest float; storage stays double either way.
enum class Precision { f32, f64 };

Precision precision() noexcept;
void set_precision(Precision p) noexcept;
double round_to_precision(double v) noexcept;
void round_to_precision(std::span<double> values) noexcept;

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

/// Dense row-major array of reals. Rank-2 views treat the last dimension as
/// columns and fold everything before it into rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double item() const;
  bool all_finite() const noexcept;
  Tensor reshaped(Shape shape) const;
  void fill(double v) noexcept;

  Tensor& operator+=(const Tensor& other);

  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor transpose(const Tensor& m);
double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& a) noexcept;

// C = op(A) * op(B) on the rank-2 views. Runs in the global precision.
Tensor matmul_values(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b);
// out += op(A) * op(B) on raw row-major buffers; A is a_rows x a_cols before op.
void gemm_accumulate(const double* a, std::size_t a_rows, std::size_t a_cols, bool transpose_a,
                     const double* b, std::size_t b_rows, std::size_t b_cols, bool transpose_b,
                     double* out);
// C += op(A) * op(B)
void matmul_accumulate(const Tensor& a, bool transpose_a, const Tensor& b, bool transpose_b,
                       Tensor& out);

}  // namespace stlgsl
