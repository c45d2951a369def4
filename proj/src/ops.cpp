#include <algorithm>
#include <cmath>

#include "stlgsl/autodiff.hpp"
#include "stlgsl/error.hpp"

namespace stlgsl::ad {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ConfigError("op on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ConfigError("op inputs come from different tapes");
  return t;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  if (b.size() == 1) return Broadcast::kRightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

// Applies fn(x_a, x_b) elementwise with scalar broadcast.
template <typename Fn>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast kind, Fn fn) {
  const Tensor& big = kind == Broadcast::kLeftScalar ? b : a;
  Tensor out(big.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Broadcast::kLeftScalar ? a[0] : a[i];
    const double y = kind == Broadcast::kRightScalar ? b[0] : b[i];
    out[i] = fn(x, y);
  }
  return out;
}

// Accumulates g into the gradient of an input that may have been broadcast.
void accumulate_broadcast(Tensor& dst, const Tensor& g, bool was_scalar, double factor) {
  if (was_scalar) {
    double s = 0.0;
    for (double v : g.values()) s += v;
    dst[0] += factor * s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  }
}

template <typename Fn, typename Deriv>
Var unary(const char* name, const Var& a, Fn fn, Deriv deriv) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  return tape.record(name, std::move(out), {a}, [a, deriv](const Tensor& g, GradSink& sink) {
    const Tensor& x = a.value();
    Tensor& dx = sink.grad(0);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * deriv(x[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  Tensor out = matmul_values(av, false, bv, false);
  return tape.record("matmul", std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) matmul_accumulate(g, false, b.value(), true, sink.grad(0));
    if (sink.wants(1)) matmul_accumulate(a.value(), true, g, false, sink.grad(1));
  });
}

Var transpose(const Var& a) {
  Tape& tape = tape_of(a);
  require_rank2(a.value(), "transpose");
  return tape.record("transpose", stlgsl::transpose(a.value()), {a},
                     [](const Tensor& g, GradSink& sink) { sink.grad(0) += stlgsl::transpose(g); });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const auto kind = broadcast_kind(a.value(), b.value(), "add");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x + y; });
  return tape.record("add", std::move(out), {a, b}, [kind](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) accumulate_broadcast(sink.grad(0), g, kind == Broadcast::kLeftScalar, 1.0);
    if (sink.wants(1)) accumulate_broadcast(sink.grad(1), g, kind == Broadcast::kRightScalar, 1.0);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const auto kind = broadcast_kind(a.value(), b.value(), "sub");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x - y; });
  return tape.record("sub", std::move(out), {a, b}, [kind](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) accumulate_broadcast(sink.grad(0), g, kind == Broadcast::kLeftScalar, 1.0);
    if (sink.wants(1)) {
      accumulate_broadcast(sink.grad(1), g, kind == Broadcast::kRightScalar, -1.0);
    }
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const auto kind = broadcast_kind(a.value(), b.value(), "hadamard");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x * y; });
  return tape.record("hadamard", std::move(out), {a, b},
                     [a, b, kind](const Tensor& g, GradSink& sink) {
                       const Tensor& av = a.value();
                       const Tensor& bv = b.value();
                       if (sink.wants(0)) {
                         Tensor prod = zip(g, bv, kind == Broadcast::kRightScalar
                                                      ? Broadcast::kRightScalar
                                                      : Broadcast::kSame,
                                           [](double x, double y) { return x * y; });
                         accumulate_broadcast(sink.grad(0), prod,
                                              kind == Broadcast::kLeftScalar, 1.0);
                       }
                       if (sink.wants(1)) {
                         Tensor prod = zip(g, av, kind == Broadcast::kLeftScalar
                                                      ? Broadcast::kRightScalar
                                                      : Broadcast::kSame,
                                           [](double x, double y) { return x * y; });
                         accumulate_broadcast(sink.grad(1), prod,
                                              kind == Broadcast::kRightScalar, 1.0);
                       }
                     });
}

Var scale(const Var& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

namespace {
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary("sigmoid", a, logistic, [](double x) {
    const double s = logistic(x);
    return s * (1.0 - s);
  });
}

Var abs(const Var& a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return tape.record("sum", Tensor::scalar(s), {a}, [](const Tensor& g, GradSink& sink) {
    Tensor& dx = sink.grad(0);
    for (double& v : dx.values()) v += g[0];
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_n(std::span<const Var> terms) {
  if (terms.empty()) throw DimensionError("sum_n needs at least one term");
  Tape& tape = tape_of(terms[0]);
  Tensor out = terms[0].value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    if (terms[k].tape() != &tape) throw ConfigError("sum_n inputs come from different tapes");
    if (terms[k].shape() != out.shape()) {
      throw DimensionError("sum_n: shape " + shape_str(terms[k].shape()) + " differs from " +
                           shape_str(out.shape()));
    }
    out += terms[k].value();
  }
  const std::size_t n = terms.size();
  return tape.record("sum_n", std::move(out), std::vector<Var>(terms.begin(), terms.end()),
                     [n](const Tensor& g, GradSink& sink) {
                       for (std::size_t k = 0; k < n; ++k) {
                         if (sink.wants(k)) sink.grad(k) += g;
                       }
                     });
}

Var add_bias(const Var& x, const Var& bias) {
  Tape& tape = tape_of(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " vs input " +
                         shape_str(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
  }
  return tape.record("add_bias", std::move(out), {x, bias}, [c](const Tensor& g, GradSink& sink) {
    if (sink.wants(0)) sink.grad(0) += g;
    if (sink.wants(1)) {
      Tensor& db = sink.grad(1);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t j = 0; j < c; ++j) db[j] += g[r * c + j];
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  Tape& tape = tape_of(x, w);
  if (bias.tape() != &tape) throw ConfigError("linear inputs come from different tapes");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  require_rank2(wv, "linear");
  if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + ", weight " +
                         shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()));
  }
  const std::size_t n = xv.rows();
  const std::size_t c = wv.cols();
  Tensor out(Shape{n, c});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(bv.data(), c, out.data() + r * c);
  matmul_accumulate(xv, false, wv, false, out);
  return tape.record("linear", std::move(out), {x, w, bias},
                     [x, w, n, c](const Tensor& g, GradSink& sink) {
                       if (sink.wants(0)) {
                         Tensor& dx = sink.grad(0);
                         gemm_accumulate(g.data(), n, c, false, w.value().data(), w.value().rows(),
                                         c, true, dx.data());
                       }
                       if (sink.wants(1)) {
                         const Tensor& xv = x.value();
                         gemm_accumulate(xv.data(), n, xv.cols(), true, g.data(), n, c, false,
                                         sink.grad(1).data());
                       }
                       if (sink.wants(2)) {
                         Tensor& db = sink.grad(2);
                         for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t j = 0; j < c; ++j) db[j] += g[r * c + j];
                         }
                       }
                     });
}

Var row_sum(const Var& m) {
  Tape& tape = tape_of(m);
  const Tensor& mv = m.value();
  require_rank2(mv, "row_sum");
  const std::size_t r = mv.rows();
  const std::size_t c = mv.cols();
  Tensor out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += mv[i * c + j];
    out[i] = s;
  }
  return tape.record("row_sum", std::move(out), {m}, [r, c](const Tensor& g, GradSink& sink) {
    Tensor& dm = sink.grad(0);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) dm[i * c + j] += g[i];
    }
  });
}

Var inv_sqrt_or_zero(const Var& v) {
  for (double x : v.value().values()) {
    if (x < 0.0) throw NumericError("inv_sqrt_or_zero: negative degree " + std::to_string(x));
  }
  return unary(
      "inv_sqrt_or_zero", v, [](double x) { return x > 0.0 ? 1.0 / std::sqrt(x) : 0.0; },
      [](double x) { return x > 0.0 ? -0.5 / (x * std::sqrt(x)) : 0.0; });
}

Var reciprocal_or_zero(const Var& v) {
  return unary(
      "reciprocal_or_zero", v, [](double x) { return x != 0.0 ? 1.0 / x : 0.0; },
      [](double x) { return x != 0.0 ? -1.0 / (x * x) : 0.0; });
}

Var sym_scale(const Var& m, const Var& s) {
  Tape& tape = tape_of(m, s);
  const Tensor& mv = m.value();
  const Tensor& sv = s.value();
  require_rank2(mv, "sym_scale");
  const std::size_t n = mv.rows();
  if (mv.cols() != n || sv.size() != n) {
    throw DimensionError("sym_scale: matrix " + shape_str(mv.shape()) + " with scale " +
                         shape_str(sv.shape()));
  }
  Tensor out(mv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = mv[i * n + j] * (sv[i] * sv[j]);
  }
  return tape.record("sym_scale", std::move(out), {m, s}, [m, s, n](const Tensor& g, GradSink& sink) {
    const Tensor& mv = m.value();
    const Tensor& sv = s.value();
    if (sink.wants(0)) {
      Tensor& dm = sink.grad(0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) dm[i * n + j] += g[i * n + j] * (sv[i] * sv[j]);
      }
    }
    if (sink.wants(1)) {
      Tensor& ds = sink.grad(1);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double t = g[i * n + j] * mv[i * n + j];
          ds[i] += t * sv[j];
          ds[j] += t * sv[i];
        }
      }
    }
  });
}

Var degree_normalize(const Var& m) {
  Tape& tape = tape_of(m);
  const Tensor& mv = m.value();
  require_rank2(mv, "degree_normalize");
  const std::size_t n = mv.rows();
  if (mv.cols() != n) throw DimensionError("degree_normalize: matrix " + shape_str(mv.shape()) + " is not square");
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = mv[i * n + j];
      if (v < 0.0) throw NumericError("degree_normalize: negative entry " + std::to_string(v));
      deg[i] += v;
    }
  }
  // Dividing by sqrt(d_i * d_j) keeps the rounded result <= 1 whenever m_ij <= min(d_i, d_j).
  Tensor out(mv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (deg[i] != 0.0 && deg[j] != 0.0) out[i * n + j] = mv[i * n + j] / std::sqrt(deg[i] * deg[j]);
    }
  }
  return tape.record("degree_normalize", std::move(out), {m}, [m, n, deg](const Tensor& g, GradSink& sink) {
    const Tensor& mv = m.value();
    std::vector<double> s(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) s[i] = deg[i] != 0.0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
    std::vector<double> ds(n, 0.0);
    Tensor& dm = sink.grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g[i * n + j];
        dm[i * n + j] += gij * s[i] * s[j];
        const double t = gij * mv[i * n + j];
        ds[i] += t * s[j];
        ds[j] += t * s[i];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double dd = ds[i] * -0.5 * s[i] * s[i] * s[i];
      for (std::size_t j = 0; j < n; ++j) dm[i * n + j] += dd;
    }
  });
}

Var row_scale(const Var& m, const Var& s) {
  Tape& tape = tape_of(m, s);
  const Tensor& mv = m.value();
  const Tensor& sv = s.value();
  require_rank2(mv, "row_scale");
  const std::size_t r = mv.rows();
  const std::size_t c = mv.cols();
  if (sv.size() != r) {
    throw DimensionError("row_scale: matrix " + shape_str(mv.shape()) + " with scale " +
                         shape_str(sv.shape()));
  }
  Tensor out(mv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = sv[i] * mv[i * c + j];
  }
  return tape.record("row_scale", std::move(out), {m, s},
                     [m, s, r, c](const Tensor& g, GradSink& sink) {
                       const Tensor& mv = m.value();
                       const Tensor& sv = s.value();
                       if (sink.wants(0)) {
                         Tensor& dm = sink.grad(0);
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) dm[i * c + j] += sv[i] * g[i * c + j];
                         }
                       }
                       if (sink.wants(1)) {
                         Tensor& ds = sink.grad(1);
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) ds[i] += g[i * c + j] * mv[i * c + j];
                         }
                       }
                     });
}

Var normalize_rows(const Var& m, double eps) {
  Tape& tape = tape_of(m);
  const Tensor& mv = m.value();
  require_rank2(mv, "normalize_rows");
  const std::size_t r = mv.rows();
  const std::size_t c = mv.cols();
  Tensor out(mv.shape());
  std::vector<double> norms(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += mv[i * c + j] * mv[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] < eps) continue;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] / norms[i];
  }
  const std::size_t id_hint = tape.size();
  return tape.record(
      "normalize_rows", std::move(out), {m},
      [&tape, id_hint, norms = std::move(norms), eps, r, c](const Tensor& g, GradSink& sink) {
        const Tensor& y = tape.value(id_hint);
        Tensor& dm = sink.grad(0);
        for (std::size_t i = 0; i < r; ++i) {
          if (norms[i] < eps) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            dm[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
          }
        }
      });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  if (begin > end || end > c) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t r = xv.rows();
  const std::size_t w = end - begin;
  Tensor out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(xv.data() + i * c + begin, w, out.data() + i * w);
  }
  return tape.record("slice_cols", std::move(out), {x},
                     [r, c, w, begin](const Tensor& g, GradSink& sink) {
                       Tensor& dx = sink.grad(0);
                       for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < w; ++j) dx[i * c + begin + j] += g[i * w + j];
                       }
                     });
}

Var causal_conv(const Var& x, const Var& taps, const Var& bias, std::size_t steps,
                std::size_t dilation) {
  Tape& tape = tape_of(x, taps);
  if (bias.tape() != &tape) throw ConfigError("causal_conv inputs come from different tapes");
  const Tensor& xv = x.value();
  const Tensor& tv = taps.value();
  const Tensor& bv = bias.value();
  if (tv.rank() != 3) throw DimensionError("causal_conv: taps must be {K, Cin, Cout}");
  const std::size_t k = tv.dim(0);
  const std::size_t cin = tv.dim(1);
  const std::size_t cout = tv.dim(2);
  const std::size_t n = xv.rows();
  if (k == 0 || dilation == 0 || steps == 0) {
    throw DimensionError("causal_conv: kernel size, dilation and steps must be >= 1");
  }
  if (xv.cols() != cin || n % steps != 0 || bv.size() != cout) {
    throw DimensionError("causal_conv: input " + shape_str(xv.shape()) + ", taps " +
                         shape_str(tv.shape()) + ", bias " + shape_str(bv.shape()) +
                         ", steps " + std::to_string(steps));
  }
  const std::size_t groups = n / steps;
  const std::size_t wide = k * cout;

  // Wcat[c, i*Cout + o] = taps[i, c, o]; one GEMM gives every tap's response.
  Tensor wcat(Shape{cin, wide});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = 0; c < cin; ++c) {
      std::copy_n(tv.data() + (i * cin + c) * cout, cout, wcat.data() + c * wide + i * cout);
    }
  }
  Tensor z(Shape{n, wide});
  matmul_accumulate(xv, false, wcat, false, z);

  Tensor out(Shape{n, cout});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* dst = out.data() + (g * steps + t) * cout;
      std::copy_n(bv.data(), cout, dst);
      for (std::size_t i = 0; i < k && dilation * i <= t; ++i) {
        const double* src = z.data() + (g * steps + t - dilation * i) * wide + i * cout;
        for (std::size_t o = 0; o < cout; ++o) dst[o] += src[o];
      }
    }
  }

  return tape.record(
      "causal_conv", std::move(out), {x, taps, bias},
      [x, wcat = std::move(wcat), k, cin, cout, n, groups, steps, dilation, wide](
          const Tensor& grad, GradSink& sink) {
        Tensor dz(Shape{n, wide});
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t i = 0; i < k && t + dilation * i < steps; ++i) {
              const double* src = grad.data() + (g * steps + t + dilation * i) * cout;
              std::copy_n(src, cout, dz.data() + (g * steps + t) * wide + i * cout);
            }
          }
        }
        if (sink.wants(0)) matmul_accumulate(dz, false, wcat, true, sink.grad(0));
        if (sink.wants(1)) {
          const Tensor dwcat = matmul_values(x.value(), true, dz, false);
          Tensor& dt = sink.grad(1);
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t c = 0; c < cin; ++c) {
              for (std::size_t o = 0; o < cout; ++o) {
                dt[(i * cin + c) * cout + o] += dwcat[c * wide + i * cout + o];
              }
            }
          }
        }
        if (sink.wants(2)) {
          Tensor& db = sink.grad(2);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t o = 0; o < cout; ++o) db[o] += grad[r * cout + o];
          }
        }
      });
}

Var select_step(const Var& x, std::size_t steps, std::size_t step) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (steps == 0 || xv.rows() % steps != 0 || step >= steps) {
    throw DimensionError("select_step " + std::to_string(step) + " of " + std::to_string(steps) +
                         " on " + shape_str(xv.shape()));
  }
  const std::size_t groups = xv.rows() / steps;
  const std::size_t c = xv.cols();
  Tensor out(Shape{groups, c});
  for (std::size_t g = 0; g < groups; ++g) {
    std::copy_n(xv.data() + (g * steps + step) * c, c, out.data() + g * c);
  }
  return tape.record("select_step", std::move(out), {x},
                     [groups, steps, step, c](const Tensor& grad, GradSink& sink) {
                       Tensor& dx = sink.grad(0);
                       for (std::size_t g = 0; g < groups; ++g) {
                         for (std::size_t j = 0; j < c; ++j) {
                           dx[(g * steps + step) * c + j] += grad[g * c + j];
                         }
                       }
                     });
}

Var slice_steps(const Var& x, std::size_t steps, std::size_t begin) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (steps == 0 || xv.rows() % steps != 0 || begin >= steps) {
    throw DimensionError("slice_steps from " + std::to_string(begin) + " of " +
                         std::to_string(steps) + " on " + shape_str(xv.shape()));
  }
  const std::size_t groups = xv.rows() / steps;
  const std::size_t c = xv.cols();
  const std::size_t kept = steps - begin;
  Tensor out(Shape{groups * kept, c});
  for (std::size_t g = 0; g < groups; ++g) {
    std::copy_n(xv.data() + (g * steps + begin) * c, kept * c, out.data() + g * kept * c);
  }
  return tape.record("slice_steps", std::move(out), {x},
                     [groups, steps, begin, kept, c](const Tensor& grad, GradSink& sink) {
                       Tensor& dx = sink.grad(0);
                       for (std::size_t g = 0; g < groups; ++g) {
                         for (std::size_t j = 0; j < kept * c; ++j) {
                           dx[(g * steps + begin) * c + j] += grad[g * kept * c + j];
                         }
                       }
                     });
}

Var node_mix(const Var& p, const Var& x) {
  Tape& tape = tape_of(p, x);
  const Tensor& pv = p.value();
  const Tensor& xv = x.value();
  require_rank2(pv, "node_mix");
  const std::size_t nodes = pv.rows();
  if (pv.cols() != nodes || nodes == 0 || xv.rows() % nodes != 0) {
    throw DimensionError("node_mix: operator " + shape_str(pv.shape()) + " on " +
                         shape_str(xv.shape()));
  }
  const std::size_t width = xv.size() / nodes;
  Tensor out(xv.shape());
  gemm_accumulate(pv.data(), nodes, nodes, false, xv.data(), nodes, width, false, out.data());
  return tape.record("node_mix", std::move(out), {p, x},
                     [p, x, nodes, width](const Tensor& g, GradSink& sink) {
                       if (sink.wants(0)) {
                         gemm_accumulate(g.data(), nodes, width, false, x.value().data(), nodes,
                                         width, true, sink.grad(0).data());
                       }
                       if (sink.wants(1)) {
                         gemm_accumulate(p.value().data(), nodes, nodes, true, g.data(), nodes,
                                         width, false, sink.grad(1).data());
                       }
                     });
}

}  // namespace stlgsl::ad
