#include "stlgsl/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "stlgsl/error.hpp"

namespace stlgsl {
namespace {

using json = nlohmann::ordered_json;

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& known) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) {
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

std::string where(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

std::size_t get_count(const json& v, const std::string& name) {
  if (!v.is_number_unsigned()) {
    throw ConfigError(name + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& name) {
  if (v.is_string() && (v == "inf" || v == "infinity")) return std::numeric_limits<double>::infinity();
  if (!v.is_number()) throw ConfigError(name + " must be a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& name) {
  if (!v.is_boolean()) throw ConfigError(name + " must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& name) {
  if (!v.is_string()) throw ConfigError(name + " must be a string");
  return v.get<std::string>();
}

std::vector<std::size_t> get_counts(const json& v, const std::string& name) {
  if (!v.is_array()) throw ConfigError(name + " must be an array of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(get_count(e, name));
  return out;
}

const std::set<std::string> kModelKeys = {
    "input_steps",     "output_steps",      "blocks",         "kernel_size",
    "dilations",       "residual_channels", "skip_channels",  "head_channels",
    "diffusion_steps", "padding",           "generator",      "use_generator",
    "use_predefined_init", "symmetrize",    "use_curriculum"};
const std::set<std::string> kDerivedModelKeys = {"num_nodes", "num_features",
                                                 "generator_input_width", "predefined_graph"};

json model_to_json(const ModelConfig& c, bool derived) {
  json j;
  if (derived) {
    j["num_nodes"] = c.num_nodes;
    j["num_features"] = c.num_features;
    j["generator_input_width"] = c.generator_input_width;
    j["predefined_graph"] = c.predefined_graph;
  }
  j["input_steps"] = c.input_steps;
  j["output_steps"] = c.output_steps;
  j["blocks"] = c.blocks;
  j["kernel_size"] = c.kernel_size;
  j["dilations"] = c.dilations;
  j["residual_channels"] = c.residual_channels;
  j["skip_channels"] = c.skip_channels;
  j["head_channels"] = c.head_channels;
  j["diffusion_steps"] = c.diffusion_steps;
  j["padding"] = c.padding == Padding::kValid ? "valid" : "causal";
  j["generator"] = {{"hidden", c.generator.hidden},
                    {"embedding_dim", c.generator.embedding_dim},
                    {"k", c.generator.k},
                    {"metric", "cosine"}};
  j["use_generator"] = c.use_generator;
  j["use_predefined_init"] = c.use_predefined_init;
  j["symmetrize"] = c.symmetrize;
  j["use_curriculum"] = c.use_curriculum;
  return j;
}

void model_from_json(const json& j, ModelConfig& c, bool derived) {
  std::set<std::string> known = kModelKeys;
  if (derived) known.insert(kDerivedModelKeys.begin(), kDerivedModelKeys.end());
  reject_unknown(j, "model", known);
  for (const auto& [key, v] : j.items()) {
    const std::string name = where("model", key);
    if (key == "num_nodes") c.num_nodes = get_count(v, name);
    else if (key == "num_features") c.num_features = get_count(v, name);
    else if (key == "generator_input_width") c.generator_input_width = get_count(v, name);
    else if (key == "predefined_graph") c.predefined_graph = get_bool(v, name);
    else if (key == "input_steps") c.input_steps = get_count(v, name);
    else if (key == "output_steps") c.output_steps = get_count(v, name);
    else if (key == "blocks") c.blocks = get_count(v, name);
    else if (key == "kernel_size") c.kernel_size = get_count(v, name);
    else if (key == "dilations") c.dilations = get_counts(v, name);
    else if (key == "residual_channels") c.residual_channels = get_count(v, name);
    else if (key == "skip_channels") c.skip_channels = get_count(v, name);
    else if (key == "head_channels") c.head_channels = get_count(v, name);
    else if (key == "diffusion_steps") c.diffusion_steps = get_count(v, name);
    else if (key == "padding") {
      const std::string p = get_string(v, name);
      if (p == "causal") c.padding = Padding::kCausal;
      else if (p == "valid") c.padding = Padding::kValid;
      else throw ConfigError(name + " must be \"causal\" or \"valid\"");
    } else if (key == "generator") {
      reject_unknown(v, "model.generator", {"hidden", "embedding_dim", "k", "metric"});
      for (const auto& [gk, gv] : v.items()) {
        const std::string gname = "model.generator." + gk;
        if (gk == "hidden") c.generator.hidden = get_counts(gv, gname);
        else if (gk == "embedding_dim") c.generator.embedding_dim = get_count(gv, gname);
        else if (gk == "k") c.generator.k = get_count(gv, gname);
        else if (get_string(gv, gname) != "cosine") {
          throw ConfigError(gname + ": only \"cosine\" is supported");
        }
      }
    } else if (key == "use_generator") c.use_generator = get_bool(v, name);
    else if (key == "use_predefined_init") c.use_predefined_init = get_bool(v, name);
    else if (key == "symmetrize") c.symmetrize = get_bool(v, name);
    else if (key == "use_curriculum") c.use_curriculum = get_bool(v, name);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path;
}

void parse_data(const json& j, DataSection& d, const std::filesystem::path& base) {
  reject_unknown(j, "data", {"dataset", "adjacency", "distances", "sigma", "kappa", "nan_policy",
                             "train_ratio", "val_ratio", "test_ratio", "batch_size",
                             "target_feature"});
  for (const auto& [key, v] : j.items()) {
    const std::string name = where("data", key);
    if (key == "dataset") d.dataset = resolve(base, get_string(v, name));
    else if (key == "adjacency") {
      if (!v.is_null()) d.adjacency = resolve(base, get_string(v, name));
    } else if (key == "distances") {
      if (!v.is_null()) d.distances = resolve(base, get_string(v, name));
    } else if (key == "sigma") d.sigma = get_real(v, name);
    else if (key == "kappa") d.kappa = get_real(v, name);
    else if (key == "nan_policy") {
      const std::string p = get_string(v, name);
      if (p == "carry_forward") d.nan_policy = NanPolicy::kCarryForward;
      else if (p == "zero_fill") d.nan_policy = NanPolicy::kZeroFill;
      else throw ConfigError(name + " must be \"carry_forward\" or \"zero_fill\"");
    } else if (key == "train_ratio") d.window.train_ratio = get_real(v, name);
    else if (key == "val_ratio") d.window.val_ratio = get_real(v, name);
    else if (key == "test_ratio") d.window.test_ratio = get_real(v, name);
    else if (key == "batch_size") d.window.batch_size = get_count(v, name);
    else if (key == "target_feature") d.window.target_feature = get_count(v, name);
  }
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j, "train", {"lr", "weight_decay", "step_size", "max_epochs", "patience",
                              "lr_decay", "init_epochs", "init_lr", "mask_nulls", "null_value"});
  for (const auto& [key, v] : j.items()) {
    const std::string name = where("train", key);
    if (key == "lr") t.lr = get_real(v, name);
    else if (key == "weight_decay") t.weight_decay = get_real(v, name);
    else if (key == "step_size") t.step_size = get_count(v, name);
    else if (key == "max_epochs") t.max_epochs = get_count(v, name);
    else if (key == "patience") t.patience = get_count(v, name);
    else if (key == "lr_decay") t.lr_decay = get_real(v, name);
    else if (key == "init_epochs") t.init_epochs = get_count(v, name);
    else if (key == "init_lr") t.init_lr = get_real(v, name);
    else if (key == "mask_nulls") t.mask_nulls = get_bool(v, name);
    else if (key == "null_value") t.null_value = get_real(v, name);
  }
}

// "a.b.c=value": value is read as JSON when it parses, otherwise as a string.
void apply_override(json& root, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + text + "' is not of the form key=value");
  }
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &root;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    node = &child;
  }
  (*node)[parts.back()] = std::move(value);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir,
                           const std::vector<std::string>& overrides) {
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded()) throw ConfigError("config is not valid JSON");
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(root, o);

  reject_unknown(root, "", {"data", "model", "train", "eval", "seed", "precision", "output_dir"});
  RunConfig cfg;
  for (const auto& [key, v] : root.items()) {
    if (key == "data") parse_data(v, cfg.data, base_dir);
    else if (key == "model") model_from_json(v, cfg.model, false);
    else if (key == "train") parse_train(v, cfg.train);
    else if (key == "eval") {
      reject_unknown(v, "eval", {"horizons"});
      if (v.contains("horizons")) cfg.horizons = get_counts(v["horizons"], "eval.horizons");
    } else if (key == "seed") {
      if (!v.is_null()) cfg.seed = get_count(v, "seed");
    } else if (key == "precision") {
      const std::string p = get_string(v, "precision");
      if (p == "f32") cfg.precision = Precision::f32;
      else if (p == "f64") cfg.precision = Precision::f64;
      else throw ConfigError("precision must be \"f32\" or \"f64\"");
    } else if (key == "output_dir") {
      cfg.output_dir = resolve(base_dir, get_string(v, "output_dir"));
    }
  }
  if (cfg.data.dataset.empty()) throw ConfigError("data.dataset is required");
  cfg.data.window.input_steps = cfg.model.input_steps;
  cfg.data.window.output_steps = cfg.model.output_steps;
  cfg.train.seed = resolve_seed(cfg.seed);
  for (std::size_t h : cfg.horizons) {
    if (h < 1 || h > cfg.model.output_steps) {
      throw ConfigError("eval horizon " + std::to_string(h) + " outside [1, " +
                        std::to_string(cfg.model.output_steps) + "]");
    }
  }
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.parent_path(), overrides);
}

std::string run_config_to_json(const RunConfig& c) {
  json root;
  json data;
  data["dataset"] = c.data.dataset.string();
  if (c.data.adjacency) data["adjacency"] = c.data.adjacency->string();
  if (c.data.distances) data["distances"] = c.data.distances->string();
  data["sigma"] = c.data.sigma;
  if (std::isfinite(c.data.kappa)) data["kappa"] = c.data.kappa;
  else data["kappa"] = "inf";
  data["nan_policy"] = c.data.nan_policy == NanPolicy::kZeroFill ? "zero_fill" : "carry_forward";
  data["train_ratio"] = c.data.window.train_ratio;
  data["val_ratio"] = c.data.window.val_ratio;
  data["test_ratio"] = c.data.window.test_ratio;
  data["batch_size"] = c.data.window.batch_size;
  data["target_feature"] = c.data.window.target_feature;
  root["data"] = std::move(data);
  root["model"] = model_to_json(c.model, false);
  const TrainConfig& t = c.train;
  root["train"] = {{"lr", t.lr},
                   {"weight_decay", t.weight_decay},
                   {"step_size", t.step_size},
                   {"max_epochs", t.max_epochs},
                   {"patience", t.patience},
                   {"lr_decay", t.lr_decay},
                   {"init_epochs", t.init_epochs},
                   {"init_lr", t.init_lr},
                   {"mask_nulls", t.mask_nulls},
                   {"null_value", t.null_value}};
  root["eval"] = {{"horizons", c.horizons}};
  if (c.seed) root["seed"] = *c.seed;
  root["precision"] = c.precision == Precision::f64 ? "f64" : "f32";
  root["output_dir"] = c.output_dir.string();
  return root.dump(2);
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  const char* env = std::getenv("STLGSL_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw ConfigError("STLGSL_SEED is not an unsigned integer");
  return v;
}

std::string model_config_to_json(const ModelConfig& config) {
  return model_to_json(config, true).dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) throw DataError("embedded model config is not valid JSON");
  ModelConfig c;
  model_from_json(j, c, true);
  return c;
}

}  // namespace stlgsl
