#include "stlgsl/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "stlgsl/error.hpp"

namespace stlgsl {

std::size_t ModelConfig::receptive_field() const {
  const std::size_t total = std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
  return 1 + (kernel_size > 0 ? kernel_size - 1 : 0) * total;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_nodes < 2) fail("at least 2 nodes are required");
  if (num_features < 1) fail("num_features must be >= 1");
  if (input_steps < 1 || output_steps < 1) fail("input_steps and output_steps must be >= 1");
  if (blocks < 1) fail("blocks must be >= 1");
  if (kernel_size < 1) fail("kernel_size must be >= 1");
  if (dilations.size() != blocks) {
    fail("dilation schedule has " + std::to_string(dilations.size()) + " entries for " +
         std::to_string(blocks) + " blocks");
  }
  for (std::size_t d : dilations) {
    if (d < 1) fail("dilations must be >= 1");
  }
  if (receptive_field() < input_steps) {
    fail("receptive field " + std::to_string(receptive_field()) + " is smaller than input_steps " +
         std::to_string(input_steps));
  }
  if (residual_channels < 1 || skip_channels < 1 || head_channels < 1) {
    fail("channel counts must be >= 1");
  }
  if (!use_generator && !predefined_graph) {
    fail("disabling the generator requires a pre-defined adjacency");
  }
  if (use_generator) {
    if (generator.k < 1 || generator.k > num_nodes - 1) {
      fail("generator k = " + std::to_string(generator.k) + " must lie in [1, " +
           std::to_string(num_nodes - 1) + "]");
    }
    if (generator.embedding_dim < 1 || generator.embedding_dim >= generator_input_width) {
      fail("generator embedding width " + std::to_string(generator.embedding_dim) +
           " must be smaller than its input width " + std::to_string(generator_input_width));
    }
  }
}

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

Tensor& ParameterSet::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < generator.weights.size(); ++l) {
    out.emplace_back("generator.w" + std::to_string(l), &generator.weights[l]);
    out.emplace_back("generator.b" + std::to_string(l), &generator.biases[l]);
  }
  for (std::size_t i = 0; i < network.size(); ++i) out.emplace_back(network.name(i), &network.at(i));
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) out.emplace_back(name, t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

void ModelContext::finalize(bool symmetrize) {
  transitions.reset();
  predefined_normalized.reset();
  if (!predefined) return;
  transitions = transition_matrices(*predefined);
  predefined_normalized = normalize_graph(*predefined, symmetrize);
}

ModelContext make_context(const WindowedDataset& data, std::optional<Tensor> predefined,
                          bool symmetrize) {
  const std::size_t m = data.series().num_nodes;
  if (predefined && (predefined->rank() != 2 || predefined->rows() != m || predefined->cols() != m)) {
    throw DataError("pre-defined adjacency " + shape_str(predefined->shape()) + " does not match " +
                    std::to_string(m) + " nodes");
  }
  ModelContext ctx;
  ctx.predefined = std::move(predefined);
  ctx.generator_input = data.generator_input();
  const std::size_t f = data.config().target_feature;
  for (std::size_t n = 0; n < m; ++n) {
    ctx.target_mean.push_back(data.normalizer().mean(n, f));
    ctx.target_std.push_back(data.normalizer().stddev(n, f));
  }
  ctx.finalize(symmetrize);
  return ctx;
}

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = round_to_precision(u(rng));
  return t;
}

std::string block_name(std::size_t l, const char* part) {
  return "block" + std::to_string(l) + "." + part;
}

}  // namespace

ModelParams model_init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  if (config.use_generator) {
    p.generator = make_generator_params(config.generator_input_width, config.num_nodes,
                                        config.generator, rng);
  }
  const std::size_t c = config.residual_channels;
  const std::size_t k = config.kernel_size;
  auto& net = p.network;
  net.add("input.w", glorot({config.num_features, c}, config.num_features, c, rng));
  net.add("input.b", Tensor(Shape{c}));
  for (std::size_t l = 0; l < config.blocks; ++l) {
    net.add(block_name(l, "filter.taps"), glorot({k, c, c}, k * c, k * c, rng));
    net.add(block_name(l, "filter.bias"), Tensor(Shape{c}));
    net.add(block_name(l, "gate.taps"), glorot({k, c, c}, k * c, k * c, rng));
    net.add(block_name(l, "gate.bias"), Tensor(Shape{c}));
    for (std::size_t hop = 0; hop <= config.diffusion_steps; ++hop) {
      const std::string h = std::to_string(hop);
      if (config.predefined_graph) {
        net.add(block_name(l, "diffusion.forward") + h, glorot({c, c}, c, c, rng));
        net.add(block_name(l, "diffusion.backward") + h, glorot({c, c}, c, c, rng));
      }
      net.add(block_name(l, "diffusion.latent") + h, glorot({c, c}, c, c, rng));
    }
    net.add(block_name(l, "residual.w"), glorot({c, c}, c, c, rng));
    net.add(block_name(l, "residual.b"), Tensor(Shape{c}));
    net.add(block_name(l, "skip.w"), glorot({c, config.skip_channels}, c, config.skip_channels, rng));
    net.add(block_name(l, "skip.b"), Tensor(Shape{config.skip_channels}));
  }
  net.add("head.w1", glorot({config.skip_channels, config.head_channels}, config.skip_channels,
                            config.head_channels, rng));
  net.add("head.b1", Tensor(Shape{config.head_channels}));
  net.add("head.w2", glorot({config.head_channels, config.output_steps}, config.head_channels,
                            config.output_steps, rng));
  net.add("head.b2", Tensor(Shape{config.output_steps}));
  return p;
}

Tensor to_node_major(const Tensor& batch_major) {
  const std::size_t b = batch_major.dim(0);
  const std::size_t t = batch_major.dim(1);
  const std::size_t m = batch_major.dim(2);
  Tensor out(Shape{m * b, t});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < t; ++s) {
      for (std::size_t n = 0; n < m; ++n) out[(n * b + i) * t + s] = batch_major[(i * t + s) * m + n];
    }
  }
  return out;
}

Tensor from_node_major(const Tensor& node_major, std::size_t batch, std::size_t nodes) {
  const std::size_t t = node_major.cols();
  if (node_major.rows() != batch * nodes) {
    throw DimensionError("from_node_major: " + shape_str(node_major.shape()) + " is not " +
                         std::to_string(nodes) + " x " + std::to_string(batch) + " rows");
  }
  Tensor out(Shape{batch, t, nodes});
  for (std::size_t n = 0; n < nodes; ++n) {
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t s = 0; s < t; ++s) out[(i * t + s) * nodes + n] = node_major[(n * batch + i) * t + s];
    }
  }
  return out;
}

ForwardPass forward(ad::Tape& tape, const Tensor& inputs, const ModelParams& params,
                    const ModelConfig& config, const ModelContext& context, bool requires_grad) {
  if (inputs.rank() != 4 || inputs.dim(1) != config.input_steps ||
      inputs.dim(2) != config.num_nodes || inputs.dim(3) != config.num_features) {
    throw DimensionError("model input " + shape_str(inputs.shape()) + " does not match {b, " +
                         std::to_string(config.input_steps) + ", " +
                         std::to_string(config.num_nodes) + ", " +
                         std::to_string(config.num_features) + "}");
  }
  if (context.target_mean.size() != config.num_nodes) {
    throw DimensionError("model context was built for a different node count");
  }
  const std::size_t b = inputs.dim(0);
  const std::size_t m = config.num_nodes;
  const std::size_t f = config.num_features;
  const std::size_t tin = config.input_steps;
  const bool valid = config.padding == Padding::kValid;
  std::size_t steps = valid ? std::max(tin, config.receptive_field()) : tin;
  const std::size_t lead = steps - tin;

  Tensor x0(Shape{m * b * steps, f});
  for (std::size_t n = 0; n < m; ++n) {
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t t = 0; t < tin; ++t) {
        for (std::size_t c = 0; c < f; ++c) {
          x0[((n * b + i) * steps + lead + t) * f + c] = inputs[((i * tin + t) * m + n) * f + c];
        }
      }
    }
  }

  ForwardPass pass;
  std::unordered_map<std::string, ad::Var> bound;
  for (const auto& [name, t] : params.named_tensors()) {
    const ad::Var v = tape.leaf(*t, requires_grad);
    pass.params.push_back(v);
    bound.emplace(name, v);
  }
  auto p = [&](const std::string& name) -> const ad::Var& {
    const auto it = bound.find(name);
    if (it == bound.end()) throw ConfigError("checkpoint is missing parameter " + name);
    return it->second;
  };

  DiffusionOperators ops;
  if (config.predefined_graph) {
    if (!context.transitions) throw ConfigError("model expects a pre-defined adjacency");
    ops.forward = tape.constant(context.transitions->forward);
    ops.backward = tape.constant(context.transitions->backward);
  }
  if (config.use_generator) {
    if (params.generator.weights.empty()) throw ConfigError("model parameters lack a generator");
    BoundGenerator g;
    g.k = params.generator.k;
    for (std::size_t l = 0; l < params.generator.weights.size(); ++l) {
      g.weights.push_back(p("generator.w" + std::to_string(l)));
      g.biases.push_back(p("generator.b" + std::to_string(l)));
    }
    ops.latent = normalize_graph(generate_latent(tape.constant(context.generator_input), g),
                                 config.symmetrize);
    pass.latent = ops.latent;
  } else {
    if (!context.predefined_normalized) {
      throw ConfigError("generator disabled but no pre-defined adjacency supplied");
    }
    ops.latent = tape.constant(*context.predefined_normalized);
  }

  ad::Var x = ad::linear(tape.constant(std::move(x0)), p("input.w"), p("input.b"));
  std::vector<ad::Var> skips;
  for (std::size_t l = 0; l < config.blocks; ++l) {
    const std::size_t d = config.dilations[l];
    ad::Var h = gated_tcn(x, p(block_name(l, "filter.taps")), p(block_name(l, "filter.bias")),
                          p(block_name(l, "gate.taps")), p(block_name(l, "gate.bias")), steps, d);
    ad::Var residual = x;
    if (valid) {
      const std::size_t trim = (config.kernel_size - 1) * d;
      h = ad::slice_steps(h, steps, trim);
      residual = ad::slice_steps(x, steps, trim);
      steps -= trim;
    }
    DiffusionWeights w;
    for (std::size_t hop = 0; hop <= config.diffusion_steps; ++hop) {
      const std::string hs = std::to_string(hop);
      if (config.predefined_graph) {
        w.forward.push_back(p(block_name(l, "diffusion.forward") + hs));
        w.backward.push_back(p(block_name(l, "diffusion.backward") + hs));
      }
      w.latent.push_back(p(block_name(l, "diffusion.latent") + hs));
    }
    const ad::Var z = diffusion_conv(h, ops, w, config.diffusion_steps);
    x = ad::add(ad::linear(z, p(block_name(l, "residual.w")), p(block_name(l, "residual.b"))),
                residual);
    skips.push_back(ad::linear(ad::select_step(x, steps, steps - 1), p(block_name(l, "skip.w")),
                               p(block_name(l, "skip.b"))));
  }
  const ad::Var skip = ad::relu(ad::sum_n(skips));
  const ad::Var hidden = ad::relu(ad::linear(skip, p("head.w1"), p("head.b1")));
  const ad::Var out_z = ad::linear(hidden, p("head.w2"), p("head.b2"));

  const std::size_t tout = config.output_steps;
  Tensor scale(Shape{m * b, tout});
  Tensor shift(Shape{m * b, tout});
  for (std::size_t n = 0; n < m; ++n) {
    for (std::size_t r = n * b * tout; r < (n + 1) * b * tout; ++r) {
      scale[r] = context.target_std[n];
      shift[r] = context.target_mean[n];
    }
  }
  pass.prediction =
      ad::add(ad::hadamard(out_z, tape.constant(std::move(scale))), tape.constant(std::move(shift)));
  return pass;
}

Tensor predict(const Tensor& inputs, const ModelParams& params, const ModelConfig& config,
               const ModelContext& context) {
  ad::Tape tape;
  const ForwardPass pass = forward(tape, inputs, params, config, context, false);
  return from_node_major(pass.prediction.value(), inputs.dim(0), config.num_nodes);
}

Tensor current_graph(const ModelParams& params, const ModelConfig& config,
                     const ModelContext& context) {
  if (config.use_generator) {
    return generate_graph(context.generator_input, params.generator, config.symmetrize).normalized;
  }
  if (!context.predefined_normalized) {
    throw ConfigError("no latent graph: generator disabled and no pre-defined adjacency");
  }
  return *context.predefined_normalized;
}

}  // namespace stlgsl
