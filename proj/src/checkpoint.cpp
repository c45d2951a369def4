#include <bit>
#include <cstring>
#include <fstream>

#include "stlgsl/error.hpp"
#include "stlgsl/model.hpp"
#include "stlgsl/run_config.hpp"

namespace stlgsl {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw DataError("checkpoint truncated while reading " + what);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

std::string take_string(std::istream& is, std::size_t n, const std::string& what) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError("checkpoint truncated while reading " + what);
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  const std::string cfg = model_config_to_json(config);
  put<std::uint64_t>(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  const auto named = params.named_tensors();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put<std::uint64_t>(os, d);
    for (double v : t->values()) put<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = take<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = take<std::uint64_t>(is, "config length");
  if (cfg_len > (1u << 24)) throw DataError("checkpoint config block is implausibly large");
  ModelConfig config = model_config_from_json(take_string(is, cfg_len, "config"));

  ModelParams params;
  const auto count = take<std::uint32_t>(is, "tensor count");
  std::vector<std::pair<std::string, Tensor>> gen_tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(is, "name length");
    std::string name = take_string(is, name_len, "tensor name");
    const auto rank = take<std::uint32_t>(is, name + " rank");
    if (rank > 8) throw DataError("tensor " + name + " has implausible rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::uint64_t>(is, name + " shape"));
    Tensor t(shape);
    for (double& v : t.values()) v = std::bit_cast<float>(take<std::uint32_t>(is, name + " values"));
    if (name.rfind("generator.", 0) == 0) {
      gen_tensors.emplace_back(std::move(name), std::move(t));
    } else {
      params.network.add(std::move(name), std::move(t));
    }
  }
  if (is.peek() != std::ifstream::traits_type::eof()) {
    throw DataError("checkpoint has trailing bytes");
  }

  for (std::size_t l = 0; 2 * l < gen_tensors.size(); ++l) {
    const std::string w = "generator.w" + std::to_string(l);
    const std::string b = "generator.b" + std::to_string(l);
    if (gen_tensors[2 * l].first != w || 2 * l + 1 >= gen_tensors.size() ||
        gen_tensors[2 * l + 1].first != b) {
      throw DataError("checkpoint generator tensors are out of order");
    }
    params.generator.weights.push_back(std::move(gen_tensors[2 * l].second));
    params.generator.biases.push_back(std::move(gen_tensors[2 * l + 1].second));
  }
  params.generator.k = config.generator.k;
  params.generator.metric = config.generator.metric;
  if (config.use_generator != !params.generator.weights.empty()) {
    throw DataError("checkpoint generator tensors do not match its config");
  }
  return {std::move(config), std::move(params)};
}

}  // namespace stlgsl
