#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stlgsl/autodiff.hpp"
#include "stlgsl/data_io.hpp"
#include "stlgsl/graph_generator.hpp"
#include "stlgsl/st_layers.hpp"

namespace stlgsl {

enum class Padding { kCausal, kValid };

struct ModelConfig {
  std::size_t num_nodes = 0;
  std::size_t num_features = 1;
  std::size_t input_steps = 12;
  std::size_t output_steps = 12;
  std::size_t blocks = 4;
  std::size_t kernel_size = 2;
  std::vector<std::size_t> dilations = {1, 2, 4, 8};
  std::size_t residual_channels = 32;
  std::size_t skip_channels = 64;
  std::size_t head_channels = 64;
  std::size_t diffusion_steps = 2;
  Padding padding = Padding::kCausal;
  GeneratorConfig generator;
  std::size_t generator_input_width = 0;  // training-split length fed to the generator
  bool predefined_graph = true;           // three-term diffusion when an adjacency exists

  // Ablation switches.
  bool use_generator = true;
  bool use_predefined_init = true;
  bool symmetrize = true;
  bool use_curriculum = true;

  /// 1 + (K - 1) * sum(dilations)
  std::size_t receptive_field() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Named tensors in insertion order.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& at(std::size_t i) { return entries_[i].second; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelParams {
  ParameterSet network;
  GeneratorParams generator;  // empty when the generator is disabled

  /// Generator tensors first ("generator.w0", "generator.b0", ...), then the network.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::size_t parameter_count() const;
};

/// Data-derived inputs shared by every forward pass.
struct ModelContext {
  std::optional<Tensor> predefined;     // raw pre-defined adjacency A
  Tensor generator_input;               // {M, T_train}, z-scored target channel
  std::vector<double> target_mean;      // per node, for de-normalising outputs
  std::vector<double> target_std;

  std::optional<TransitionMatrices> transitions;  // filled by finalize()
  std::optional<Tensor> predefined_normalized;

  void finalize(bool symmetrize);
};

ModelContext make_context(const WindowedDataset& data, std::optional<Tensor> predefined,
                          bool symmetrize = true);

/// Glorot-uniform weights, zero biases. The generator is left at its random
/// initialisation; see initialize_generator for the pre-fit.
ModelParams model_init(const ModelConfig& config, std::uint64_t seed);

struct ForwardPass {
  ad::Var prediction;           // {M*b, T_out}, node-major rows, raw units
  std::optional<ad::Var> latent;  // normalised latent graph when the generator runs
  std::vector<ad::Var> params;  // aligned with ModelParams::named_tensors()
};

/// inputs {b, T_in, M, F}, z-scored.
ForwardPass forward(ad::Tape& tape, const Tensor& inputs, const ModelParams& params,
                    const ModelConfig& config, const ModelContext& context, bool requires_grad);

/// Convenience: {b, T_out, M} predictions without gradients.
Tensor predict(const Tensor& inputs, const ModelParams& params, const ModelConfig& config,
               const ModelContext& context);

/// Normalised latent graph the model would use (generator output or the
/// normalised pre-defined adjacency).
Tensor current_graph(const ModelParams& params, const ModelConfig& config,
                     const ModelContext& context);

/// {b, T, M} <-> {M*b, T} node-major.
Tensor to_node_major(const Tensor& batch_major);
Tensor from_node_major(const Tensor& node_major, std::size_t batch, std::size_t nodes);

// Checkpoint: "STCK", u32 version, u64 json length, ModelConfig JSON, u32
// tensor count, then per tensor u32 name length, name, u32 rank, u64 dims,
// little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace stlgsl
