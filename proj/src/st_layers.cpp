#include "stlgsl/st_layers.hpp"

#include "stlgsl/error.hpp"

namespace stlgsl {

Tensor dilated_causal_conv(const Tensor& x, const ConvKernel& kernel) {
  ad::Tape tape;
  const std::size_t steps = x.cols();
  const ad::Var xs = tape.constant(transpose(x));
  const ad::Var y = ad::causal_conv(xs, tape.constant(kernel.taps), tape.constant(kernel.bias),
                                    steps, kernel.dilation);
  return transpose(y.value());
}

ad::Var dilated_causal_conv(const ad::Var& x, const ad::Var& taps, const ad::Var& bias,
                            std::size_t steps, std::size_t dilation) {
  return ad::causal_conv(x, taps, bias, steps, dilation);
}

ad::Var gated_tcn(const ad::Var& x, const ad::Var& filter_taps, const ad::Var& filter_bias,
                  const ad::Var& gate_taps, const ad::Var& gate_bias, std::size_t steps,
                  std::size_t dilation) {
  if (filter_taps.shape() != gate_taps.shape() || filter_bias.shape() != gate_bias.shape()) {
    throw DimensionError("gated_tcn: filter " + shape_str(filter_taps.shape()) +
                         " and gate " + shape_str(gate_taps.shape()) + " differ");
  }
  const ad::Var filter = ad::causal_conv(x, filter_taps, filter_bias, steps, dilation);
  const ad::Var gate = ad::causal_conv(x, gate_taps, gate_bias, steps, dilation);
  return ad::hadamard(ad::tanh(filter), ad::sigmoid(gate));
}

namespace {
Tensor row_normalize(const Tensor& a) {
  const std::size_t n = a.rows();
  Tensor p(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < a.cols(); ++j) p(i, j) = a(i, j) / s;
  }
  return p;
}
}  // namespace

TransitionMatrices transition_matrices(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.rows() != adjacency.cols()) {
    throw DimensionError("transition matrices need a square adjacency, got " +
                         shape_str(adjacency.shape()));
  }
  for (double v : adjacency.values()) {
    if (v < 0.0) throw DataError("adjacency has negative entries");
  }
  return {row_normalize(adjacency), row_normalize(transpose(adjacency))};
}

namespace {
void add_hops(const ad::Var& x, const ad::Var& op, const std::vector<ad::Var>& weights,
              std::size_t diffusion_steps, const char* name, std::vector<ad::Var>& terms) {
  if (weights.size() != diffusion_steps + 1) {
    throw DimensionError(std::string("diffusion_conv: ") + name + " term has " +
                         std::to_string(weights.size()) + " weights, expected " +
                         std::to_string(diffusion_steps + 1));
  }
  ad::Var state = x;
  for (std::size_t k = 0; k <= diffusion_steps; ++k) {
    if (k > 0) state = ad::node_mix(op, state);
    terms.push_back(ad::matmul(state, weights[k]));
  }
}
}  // namespace

ad::Var diffusion_conv(const ad::Var& x, const DiffusionOperators& ops,
                       const DiffusionWeights& weights, std::size_t diffusion_steps) {
  if (x.value().rank() != 2) {
    throw DimensionError("diffusion_conv expects a rank-2 input, got " + shape_str(x.shape()));
  }
  const Tensor& graph = ops.latent.value();
  if (graph.rank() != 2 || graph.rows() != graph.cols() || graph.rows() == 0 ||
      x.value().rows() % graph.rows() != 0) {
    throw DimensionError("diffusion_conv: graph " + shape_str(graph.shape()) +
                         " does not fit node-major input " + shape_str(x.shape()));
  }
  std::vector<ad::Var> terms;
  if (ops.forward.has_value() != ops.backward.has_value()) {
    throw ConfigError("diffusion_conv: forward and backward operators come as a pair");
  }
  if (ops.forward) {
    add_hops(x, *ops.forward, weights.forward, diffusion_steps, "forward", terms);
    add_hops(x, *ops.backward, weights.backward, diffusion_steps, "backward", terms);
  } else if (!weights.forward.empty() || !weights.backward.empty()) {
    throw ConfigError("diffusion_conv: transition weights given without a pre-defined graph");
  }
  add_hops(x, ops.latent, weights.latent, diffusion_steps, "latent", terms);
  return ad::sum_n(terms);
}

}  // namespace stlgsl
