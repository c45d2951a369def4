#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "stlgsl/autodiff.hpp"
#include "stlgsl/tensor.hpp"

namespace stlgsl {

/// Dilated causal convolution taps. taps[i] multiplies x[t - dilation * i].
struct ConvKernel {
  Tensor taps;  // {K, Cin, Cout}
  Tensor bias;  // {Cout}
  std::size_t dilation = 1;
};

/// Channel-major convenience form: x is {Cin, T}, result {Cout, T}.
Tensor dilated_causal_conv(const Tensor& x, const ConvKernel& kernel);

/// Sequence-layout form (rows = groups * steps, columns = channels).
ad::Var dilated_causal_conv(const ad::Var& x, const ad::Var& taps, const ad::Var& bias,
                            std::size_t steps, std::size_t dilation);

/// h = tanh(filter *_d x + b) (.) sigmoid(gate *_d x + c)
ad::Var gated_tcn(const ad::Var& x, const ad::Var& filter_taps, const ad::Var& filter_bias,
                  const ad::Var& gate_taps, const ad::Var& gate_bias, std::size_t steps,
                  std::size_t dilation);

struct TransitionMatrices {
  Tensor forward;   // A / rowsum(A)
  Tensor backward;  // A^T / rowsum(A^T)
};

/// Random-walk normalisation; zero-sum rows stay zero. Negative entries throw.
TransitionMatrices transition_matrices(const Tensor& adjacency);

/// Graph operators for one diffusion layer. forward/backward are present
/// exactly when a pre-defined adjacency is available.
struct DiffusionOperators {
  std::optional<ad::Var> forward;
  std::optional<ad::Var> backward;
  ad::Var latent;
};

/// Per-hop weights {Cin, Cout}; each list has K_diff + 1 entries, and
/// forward/backward are empty in the latent-only form.
struct DiffusionWeights {
  std::vector<ad::Var> forward;
  std::vector<ad::Var> backward;
  std::vector<ad::Var> latent;
};

/// Z = sum_k P_f^k X W_k1 + P_b^k X W_k2 + A~^k X W_k3, or sum_k A~^k X W_k when
/// no pre-defined graph is given. Powers are applied iteratively to X.
/// x is node-major: rows = nodes * R.
ad::Var diffusion_conv(const ad::Var& x, const DiffusionOperators& ops,
                       const DiffusionWeights& weights, std::size_t diffusion_steps);

}  // namespace stlgsl
