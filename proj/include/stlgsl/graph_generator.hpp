#pragma once

// Latent graph structure learning: an MLP embeds every node's full training
// history, cosine similarity plus a hard top-k mask turns the embeddings into
// a sparse weighted graph, and a normalisation step symmetrises and
// degree-normalises it.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "stlgsl/autodiff.hpp"
#include "stlgsl/tensor.hpp"

namespace stlgsl {

enum class SimilarityMetric { kCosine };

struct GeneratorConfig {
  std::vector<std::size_t> hidden = {256};
  std::size_t embedding_dim = 64;
  std::size_t k = 20;
  SimilarityMetric metric = SimilarityMetric::kCosine;
};

struct GeneratorParams {
  std::vector<Tensor> weights;  // layer l: {in, out}
  std::vector<Tensor> biases;   // layer l: {out}
  std::size_t k = 20;
  SimilarityMetric metric = SimilarityMetric::kCosine;

  std::size_t input_width() const { return weights.empty() ? 0 : weights.front().rows(); }
  std::size_t embedding_dim() const { return weights.empty() ? 0 : weights.back().cols(); }
};

/// Glorot-uniform weights, zero biases. Throws ConfigError unless the
/// embedding is narrower than the input and 1 <= k <= num_nodes - 1.
GeneratorParams make_generator_params(std::size_t input_width, std::size_t num_nodes,
                                      const GeneratorConfig& config, std::mt19937_64& rng);

struct LatentGraph {
  Tensor raw;         // A' = T_mask (.) S
  Tensor normalized;  // A~
};

/// Generator parameters bound as leaves of one tape.
struct BoundGenerator {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  std::size_t k = 0;
};

BoundGenerator bind_generator(ad::Tape& tape, const GeneratorParams& params, bool requires_grad);

/// ReLU between layers, none after the last.
ad::Var mlp_forward(const ad::Var& x_full, const BoundGenerator& g);
/// Cosine similarity of embedding rows; zero rows give zero similarity.
ad::Var similarity_matrix(const ad::Var& embeddings);
/// 0/1 mask with exactly k ones per row at the largest off-diagonal entries,
/// ties broken toward the lower column index.
Tensor topk_mask(const Tensor& similarity, std::size_t k);
/// A' = topk_mask(S) (.) S; the mask is a constant of the pass.
ad::Var generate_latent(const ad::Var& x_full, const BoundGenerator& g);
/// A~ = D^-1/2 sym(ReLU(A')) D^-1/2 with sym(X) = (X + X^T)/2 and D its degrees.
/// Without symmetrisation: D^-1 ReLU(A') with D the row degrees.
ad::Var normalize_graph(const ad::Var& raw, bool symmetrize = true);

Tensor mlp_forward(const Tensor& x_full, const GeneratorParams& params);
Tensor similarity_matrix(const Tensor& embeddings);
Tensor normalize_graph(const Tensor& raw, bool symmetrize = true);
LatentGraph generate_graph(const Tensor& x_full, const GeneratorParams& params,
                           bool symmetrize = true);

struct GeneratorInitResult {
  GeneratorParams params;
  std::vector<double> loss_history;  // loss before each update, plus the final loss
};

/// Fits the generator so its normalised graph reproduces normalize_graph(target)
/// under squared Frobenius loss, with `epochs` full-batch Adam steps.
/// Throws NumericError on a non-finite loss.
GeneratorInitResult initialize_generator(GeneratorParams params, const Tensor& x_full,
                                         const Tensor& target, std::size_t epochs, double lr,
                                         bool symmetrize = true);

struct SupportStats {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t learned_edges = 0;
  std::size_t reference_edges = 0;
  std::size_t shared_edges = 0;
};

/// Off-diagonal support comparison: an edge is present when |value| > threshold.
SupportStats edge_support(const Tensor& learned, const Tensor& reference, double threshold = 0.0);

}  // namespace stlgsl
