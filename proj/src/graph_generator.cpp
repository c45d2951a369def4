#include "stlgsl/graph_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stlgsl/error.hpp"
#include "stlgsl/optim.hpp"

namespace stlgsl {

GeneratorParams make_generator_params(std::size_t input_width, std::size_t num_nodes,
                                      const GeneratorConfig& config, std::mt19937_64& rng) {
  if (config.embedding_dim == 0 || config.embedding_dim >= input_width) {
    throw ConfigError("generator embedding width " + std::to_string(config.embedding_dim) +
                      " must be positive and smaller than the input width " +
                      std::to_string(input_width));
  }
  if (num_nodes < 2 || config.k < 1 || config.k > num_nodes - 1) {
    throw ConfigError("generator k = " + std::to_string(config.k) + " must lie in [1, " +
                      std::to_string(num_nodes > 0 ? num_nodes - 1 : 0) + "]");
  }
  GeneratorParams p;
  p.k = config.k;
  p.metric = config.metric;
  std::vector<std::size_t> widths = {input_width};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.embedding_dim);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    if (in == 0 || out == 0) throw ConfigError("generator layer widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor w(Shape{in, out});
    for (double& v : w.values()) v = round_to_precision(u(rng));
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(Shape{out});
  }
  return p;
}

BoundGenerator bind_generator(ad::Tape& tape, const GeneratorParams& params, bool requires_grad) {
  BoundGenerator g;
  g.k = params.k;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    g.weights.push_back(tape.leaf(params.weights[l], requires_grad));
    g.biases.push_back(tape.leaf(params.biases[l], requires_grad));
  }
  return g;
}

ad::Var mlp_forward(const ad::Var& x_full, const BoundGenerator& g) {
  if (g.weights.empty()) throw ConfigError("generator has no layers");
  if (x_full.value().cols() != g.weights.front().value().rows()) {
    throw DimensionError("generator input width " + std::to_string(x_full.value().cols()) +
                         " does not match first layer " +
                         shape_str(g.weights.front().value().shape()));
  }
  ad::Var h = x_full;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    h = ad::linear(h, g.weights[l], g.biases[l]);
    if (l + 1 < g.weights.size()) h = ad::relu(h);
  }
  return h;
}

ad::Var similarity_matrix(const ad::Var& embeddings) {
  const ad::Var unit = ad::normalize_rows(embeddings);
  return ad::matmul(unit, ad::transpose(unit));
}

Tensor topk_mask(const Tensor& similarity, std::size_t k) {
  const std::size_t n = similarity.rows();
  if (similarity.rank() != 2 || similarity.cols() != n) {
    throw DimensionError("topk_mask expects a square matrix, got " +
                         shape_str(similarity.shape()));
  }
  if (k < 1 || n < 2 || k > n - 1) {
    throw ConfigError("top-k: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(n > 0 ? n - 1 : 0) + "]");
  }
  Tensor mask(Shape{n, n});
  std::vector<std::size_t> cols(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cols[c++] = j;
    }
    std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(k), cols.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = similarity(i, a);
                        const double sb = similarity(i, b);
                        if (sa != sb) return sa > sb;
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r) mask(i, cols[r]) = 1.0;
  }
  return mask;
}

ad::Var generate_latent(const ad::Var& x_full, const BoundGenerator& g) {
  const ad::Var s = similarity_matrix(mlp_forward(x_full, g));
  const ad::Var mask = s.tape()->constant(topk_mask(s.value(), g.k));
  return ad::hadamard(mask, s);
}

ad::Var normalize_graph(const ad::Var& raw, bool symmetrize) {
  const Tensor& a = raw.value();
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw DimensionError("normalize_graph expects a square matrix, got " + shape_str(a.shape()));
  }
  const ad::Var pos = ad::relu(raw);
  if (!symmetrize) return ad::row_scale(pos, ad::reciprocal_or_zero(ad::row_sum(pos)));
  const ad::Var sym = ad::scale(ad::add(pos, ad::transpose(pos)), 0.5);
  return ad::degree_normalize(sym);
}

Tensor mlp_forward(const Tensor& x_full, const GeneratorParams& params) {
  ad::Tape tape;
  const BoundGenerator g = bind_generator(tape, params, false);
  return mlp_forward(tape.constant(x_full), g).value();
}

Tensor similarity_matrix(const Tensor& embeddings) {
  ad::Tape tape;
  return similarity_matrix(tape.constant(embeddings)).value();
}

Tensor normalize_graph(const Tensor& raw, bool symmetrize) {
  ad::Tape tape;
  return normalize_graph(tape.constant(raw), symmetrize).value();
}

LatentGraph generate_graph(const Tensor& x_full, const GeneratorParams& params, bool symmetrize) {
  ad::Tape tape;
  const BoundGenerator g = bind_generator(tape, params, false);
  const ad::Var raw = generate_latent(tape.constant(x_full), g);
  const ad::Var norm = normalize_graph(raw, symmetrize);
  return {raw.value(), norm.value()};
}

GeneratorInitResult initialize_generator(GeneratorParams params, const Tensor& x_full,
                                         const Tensor& target, std::size_t epochs, double lr,
                                         bool symmetrize) {
  GeneratorInitResult result;
  if (epochs == 0) {
    result.params = std::move(params);
    return result;
  }
  const std::size_t n = x_full.rows();
  if (target.rank() != 2 || target.rows() != n || target.cols() != n) {
    throw DimensionError("generator init target " + shape_str(target.shape()) +
                         " does not match " + std::to_string(n) + " nodes");
  }
  const Tensor goal = normalize_graph(target, symmetrize);
  Adam adam(AdamConfig{.lr = lr});

  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    ad::Tape tape;
    const BoundGenerator g = bind_generator(tape, params, with_grad);
    const ad::Var graph = normalize_graph(generate_latent(tape.constant(x_full), g), symmetrize);
    const ad::Var diff = ad::sub(graph, tape.constant(goal));
    const ad::Var loss = ad::sum(ad::hadamard(diff, diff));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw NumericError("generator initialisation diverged (loss " + std::to_string(value) +
                         "); lower the initialisation learning rate");
    }
    if (with_grad && grads) {
      grads->clear();
      if (loss.requires_grad()) {
        ad::GradientMap gm = tape.backward(loss);
        for (std::size_t l = 0; l < g.weights.size(); ++l) {
          grads->push_back(std::move(gm.at(g.weights[l].id())));
          grads->push_back(std::move(gm.at(g.biases[l].id())));
        }
      } else {
        for (std::size_t l = 0; l < g.weights.size(); ++l) {
          grads->emplace_back(params.weights[l].shape());
          grads->emplace_back(params.biases[l].shape());
        }
      }
    }
    return value;
  };

  std::vector<Tensor> grads;
  std::vector<Tensor*> slots;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    slots.push_back(&params.weights[l]);
    slots.push_back(&params.biases[l]);
  }
  result.loss_history.reserve(epochs + 1);
  for (std::size_t e = 0; e < epochs; ++e) {
    result.loss_history.push_back(evaluate(true, &grads));
    adam.step(slots, grads);
  }
  result.loss_history.push_back(evaluate(false, nullptr));
  result.params = std::move(params);
  return result;
}

SupportStats edge_support(const Tensor& learned, const Tensor& reference, double threshold) {
  if (learned.shape() != reference.shape() || learned.rank() != 2) {
    throw DimensionError("edge_support: " + shape_str(learned.shape()) + " vs " +
                         shape_str(reference.shape()));
  }
  SupportStats s;
  const std::size_t n = learned.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool l = std::abs(learned(i, j)) > threshold;
      const bool r = std::abs(reference(i, j)) > threshold;
      s.learned_edges += l;
      s.reference_edges += r;
      s.shared_edges += l && r;
    }
  }
  s.precision = s.learned_edges ? static_cast<double>(s.shared_edges) / s.learned_edges : 0.0;
  s.recall = s.reference_edges ? static_cast<double>(s.shared_edges) / s.reference_edges : 0.0;
  return s;
}

}  // namespace stlgsl
