#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Tape owns every value produced during one forward pass, in creation
// order. Var is a lightweight handle (tape pointer + record index). The tape
// is discarded after backward(); parameters live outside it as plain Tensors
// and are re-bound as leaves on every pass.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stlgsl/tensor.hpp"

namespace stlgsl::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Handed to an op's backward closure: exposes the input gradient buffers.
class GradSink {
 public:
  /// True when input `slot` needs a gradient.
  bool wants(std::size_t slot) const;
  /// Zero-initialised accumulation buffer for input `slot`.
  Tensor& grad(std::size_t slot);

 private:
  friend class Tape;
  GradSink(Tape& tape, std::span<const std::size_t> inputs, std::vector<Tensor>& grads,
           std::vector<char>& present)
      : tape_(tape), inputs_(inputs), grads_(grads), present_(present) {}

  Tape& tape_;
  std::span<const std::size_t> inputs_;
  std::vector<Tensor>& grads_;
  std::vector<char>& present_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Leaf id -> d(loss)/d(leaf). Every leaf created with requires_grad appears,
/// zero-filled when the loss does not depend on it.
using GradientMap = std::map<std::size_t, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Append an op result. The backward closure is dropped when no input
  /// requires a gradient.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  GradientMap backward(const Var& loss);

  std::size_t size() const noexcept { return records_.size(); }
  const Tensor& value(std::size_t id) const { return records_.at(id).value; }
  bool requires_grad(std::size_t id) const { return records_.at(id).requires_grad; }
  const char* op_name(std::size_t id) const { return records_.at(id).op; }
  std::span<const std::size_t> inputs(std::size_t id) const { return records_.at(id).inputs; }

 private:
  friend class GradSink;

  struct Record {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
    bool leaf;
  };

  std::vector<Record> records_;
};

// ---------------------------------------------------------------------------
// Primitives. All shapes are checked; mismatches throw DimensionError.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise, exact shape or scalar broadcast on either side.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of equally shaped tensors.
Var sum_n(std::span<const Var> terms);

/// x[N x C] + bias[C] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);
/// x[N x Cin] * w[Cin x Cout] + bias[Cout].
Var linear(const Var& x, const Var& w, const Var& bias);

/// Row sums of a matrix, shape {rows}.
Var row_sum(const Var& m);
/// v^-1/2 elementwise with 0 mapped to 0. Negative entries are an error.
Var inv_sqrt_or_zero(const Var& v);
/// 1/v elementwise with 0 mapped to 0.
Var reciprocal_or_zero(const Var& v);
/// out_ij = m_ij * (s_i * s_j). Symmetric m gives an exactly symmetric result.
Var sym_scale(const Var& m, const Var& s);
/// out_ij = m_ij / sqrt(d_i * d_j) with d the row sums of a non-negative m;
/// entries touching a zero-degree row are 0. Never exceeds 1 when m is symmetric.
Var degree_normalize(const Var& m);
/// out_ij = s_i * m_ij.
Var row_scale(const Var& m, const Var& s);
/// Each row divided by its Euclidean norm; rows with norm below `eps` map to 0.
Var normalize_rows(const Var& m, double eps = 1e-12);

/// Columns [begin, end) of the rank-2 view.
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);

// Sequence layout: rank-2 view with rows = groups * steps (time innermost).

/// y[g, t] = sum_i x[g, t - dilation*i] * taps[i] + bias, zero before t = 0.
/// taps has shape {K, Cin, Cout}.
Var causal_conv(const Var& x, const Var& taps, const Var& bias, std::size_t steps,
                std::size_t dilation);
/// Rows of every group at one time step: result {groups, C}.
Var select_step(const Var& x, std::size_t steps, std::size_t step);
/// Drop the first `begin` steps of every group.
Var slice_steps(const Var& x, std::size_t steps, std::size_t begin);

/// Node mixing for node-major activations. x's rank-2 view is
/// (nodes * R) x C; the result is P applied to the nodes x (R*C) matrix.
Var node_mix(const Var& p, const Var& x);

// ---------------------------------------------------------------------------

/// max over components |analytic - central difference| / max(1, |central difference|).
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double eps);

/// Same check jointly over several inputs.
double grad_check_many(const std::function<Var(Tape&, std::span<const Var>)>& f,
                       std::span<const Tensor> inputs, double eps);

}  // namespace stlgsl::ad
