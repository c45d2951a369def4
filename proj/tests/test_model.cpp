#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "stlgsl/error.hpp"
#include "stlgsl/model.hpp"
#include "test_util.hpp"

namespace stlgsl {
namespace {

using testing::random_tensor;

class ModelTest : public ::testing::Test {
 protected:
  PrecisionScope precision_{Precision::f64};
};

ModelConfig toy_config() {
  ModelConfig c;
  c.num_nodes = 4;
  c.num_features = 2;
  c.input_steps = 8;
  c.output_steps = 3;
  c.blocks = 3;
  c.kernel_size = 2;
  c.dilations = {1, 2, 4};
  c.residual_channels = 3;
  c.skip_channels = 4;
  c.head_channels = 5;
  c.diffusion_steps = 2;
  c.generator = GeneratorConfig{.hidden = {6}, .embedding_dim = 3, .k = 2};
  c.generator_input_width = 20;
  return c;
}

ModelContext toy_context(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelContext ctx;
  Tensor a = random_tensor({c.num_nodes, c.num_nodes}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < c.num_nodes; ++i) {
    a(i, i) = 0.0;
    for (std::size_t j = 0; j < i; ++j) a(i, j) = a(j, i);
  }
  ctx.predefined = a;
  ctx.generator_input = random_tensor({c.num_nodes, c.generator_input_width}, rng);
  for (std::size_t n = 0; n < c.num_nodes; ++n) {
    ctx.target_mean.push_back(5.0 + static_cast<double>(n));
    ctx.target_std.push_back(0.5 + 0.25 * static_cast<double>(n));
  }
  ctx.finalize(c.symmetrize);
  return ctx;
}

// Straight-line loops over (node, batch, step, channel); shares only the
// graph construction with the library.
Tensor oracle_forward(const Tensor& in, const ModelParams& p, const ModelConfig& cfg,
                      const ModelContext& ctx) {
  using Grid = std::vector<std::vector<std::vector<std::vector<double>>>>;  // [n][b][t][c]
  const std::size_t b = in.dim(0), tin = cfg.input_steps, m = cfg.num_nodes, f = cfg.num_features;
  const std::size_t c = cfg.residual_channels, kk = cfg.kernel_size;
  auto grid = [&](std::size_t ch) { return Grid(m, std::vector(b, std::vector(tin, std::vector<double>(ch, 0.0)))); };
  const auto& net = p.network;
  auto W = [&](const std::string& name) -> const Tensor& { return net.get(name); };

  Grid x = grid(c);
  for (std::size_t n = 0; n < m; ++n)
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < tin; ++t)
        for (std::size_t o = 0; o < c; ++o) {
          double acc = W("input.b")[o];
          for (std::size_t q = 0; q < f; ++q) acc += in[((i * tin + t) * m + n) * f + q] * W("input.w")(q, o);
          x[n][i][t][o] = acc;
        }

  const Tensor latent = cfg.use_generator ? generate_graph(ctx.generator_input, p.generator).normalized
                                          : *ctx.predefined_normalized;
  std::vector<std::pair<std::string, Tensor>> graphs;
  if (cfg.predefined_graph) {
    graphs.emplace_back("forward", ctx.transitions->forward);
    graphs.emplace_back("backward", ctx.transitions->backward);
  }
  graphs.emplace_back("latent", latent);

  std::vector<std::vector<double>> skip(m * b, std::vector<double>(cfg.skip_channels, 0.0));
  for (std::size_t l = 0; l < cfg.blocks; ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    const std::size_t d = cfg.dilations[l];
    Grid h = grid(c);
    for (std::size_t n = 0; n < m; ++n)
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < tin; ++t)
          for (std::size_t o = 0; o < c; ++o) {
            double fa = W(pre + "filter.bias")[o], ga = W(pre + "gate.bias")[o];
            for (std::size_t tap = 0; tap < kk; ++tap) {
              if (t < d * tap) continue;
              for (std::size_t q = 0; q < c; ++q) {
                const double v = x[n][i][t - d * tap][q];
                fa += W(pre + "filter.taps")[(tap * c + q) * c + o] * v;
                ga += W(pre + "gate.taps")[(tap * c + q) * c + o] * v;
              }
            }
            h[n][i][t][o] = std::tanh(fa) / (1.0 + std::exp(-ga));
          }
    Grid z = grid(c);
    for (const auto& [gname, g] : graphs) {
      Tensor power = Tensor::identity(m);
      for (std::size_t hop = 0; hop <= cfg.diffusion_steps; ++hop) {
        const Tensor& wk = W(pre + "diffusion." + gname + std::to_string(hop));
        for (std::size_t n = 0; n < m; ++n)
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t t = 0; t < tin; ++t)
              for (std::size_t o = 0; o < c; ++o) {
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j)
                  for (std::size_t q = 0; q < c; ++q) acc += power(n, j) * h[j][i][t][q] * wk(q, o);
                z[n][i][t][o] += acc;
              }
        power = matmul_values(power, false, g, false);
      }
    }
    for (std::size_t n = 0; n < m; ++n)
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < tin; ++t) {
          std::vector<double> next(c);
          for (std::size_t o = 0; o < c; ++o) {
            double acc = W(pre + "residual.b")[o] + x[n][i][t][o];
            for (std::size_t q = 0; q < c; ++q) acc += z[n][i][t][q] * W(pre + "residual.w")(q, o);
            next[o] = acc;
          }
          x[n][i][t] = next;
        }
        for (std::size_t s = 0; s < cfg.skip_channels; ++s) {
          double acc = W(pre + "skip.b")[s];
          for (std::size_t q = 0; q < c; ++q) acc += x[n][i][tin - 1][q] * W(pre + "skip.w")(q, s);
          skip[n * b + i][s] += acc;
        }
      }
  }

  Tensor out({b, cfg.output_steps, m});
  for (std::size_t n = 0; n < m; ++n)
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> hid(cfg.head_channels);
      for (std::size_t o = 0; o < cfg.head_channels; ++o) {
        double acc = W("head.b1")[o];
        for (std::size_t s = 0; s < cfg.skip_channels; ++s) acc += std::max(skip[n * b + i][s], 0.0) * W("head.w1")(s, o);
        hid[o] = std::max(acc, 0.0);
      }
      for (std::size_t r = 0; r < cfg.output_steps; ++r) {
        double acc = W("head.b2")[r];
        for (std::size_t o = 0; o < cfg.head_channels; ++o) acc += hid[o] * W("head.w2")(o, r);
        out[(i * cfg.output_steps + r) * m + n] = acc * ctx.target_std[n] + ctx.target_mean[n];
      }
    }
  return out;
}

TEST_F(ModelTest, ReceptiveFieldGuard) {
  ModelConfig c = toy_config();
  c.blocks = 4;
  c.dilations = {1, 2, 4, 8};
  c.input_steps = 12;
  EXPECT_EQ(c.receptive_field(), 16u);
  EXPECT_NO_THROW(c.validate());
  c.blocks = 2;
  c.dilations = {1, 1};
  EXPECT_EQ(c.receptive_field(), 3u);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(ModelTest, ConfigValidation) {
  ModelConfig c = toy_config();
  c.dilations = {1, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.generator.k = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.use_generator = false;
  c.predefined_graph = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.num_nodes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST_F(ModelTest, SameSeedSameParams) {
  const ModelConfig c = toy_config();
  const ModelParams a = model_init(c, 5);
  const ModelParams b = model_init(c, 5);
  const ModelParams other = model_init(c, 6);
  const auto na = a.named_tensors(), nb = b.named_tensors(), no = other.named_tensors();
  ASSERT_EQ(na.size(), nb.size());
  bool differs = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nb[i].first);
    EXPECT_EQ(*na[i].second, *nb[i].second);
    differs = differs || !(*na[i].second == *no[i].second);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(na.front().first, "generator.w0");
}

TEST_F(ModelTest, OutputShapeAndOracle) {
  for (bool with_predefined : {true, false}) {
    ModelConfig c = toy_config();
    c.predefined_graph = with_predefined;
    const ModelContext ctx = toy_context(c, 1);
    const ModelParams p = model_init(c, 2);
    std::mt19937_64 rng(3);
    const Tensor in = random_tensor({3, 8, 4, 2}, rng);
    const Tensor y = predict(in, p, c, ctx);
    EXPECT_EQ(y.shape(), (Shape{3, 3, 4}));
    EXPECT_LT(max_abs_diff(y, oracle_forward(in, p, c, ctx)), 1e-10) << "predefined " << with_predefined;
  }
}

TEST_F(ModelTest, WithoutGeneratorUsesNormalizedPredefinedGraph) {
  ModelConfig c = toy_config();
  c.use_generator = false;
  const ModelContext ctx = toy_context(c, 4);
  const ModelParams p = model_init(c, 5);
  EXPECT_TRUE(p.generator.weights.empty());
  std::mt19937_64 rng(6);
  const Tensor in = random_tensor({2, 8, 4, 2}, rng);
  EXPECT_LT(max_abs_diff(predict(in, p, c, ctx), oracle_forward(in, p, c, ctx)), 1e-10);
  EXPECT_EQ(current_graph(p, c, ctx), normalize_graph(*ctx.predefined));
  ad::Tape tape;
  EXPECT_FALSE(forward(tape, in, p, c, ctx, false).latent.has_value());
}

TEST_F(ModelTest, ValidPaddingKeepsShape) {
  ModelConfig c = toy_config();
  c.padding = Padding::kValid;
  c.input_steps = 6;
  const ModelContext ctx = toy_context(c, 7);
  const ModelParams p = model_init(c, 8);
  std::mt19937_64 rng(9);
  EXPECT_EQ(predict(random_tensor({2, 6, 4, 2}, rng), p, c, ctx).shape(), (Shape{2, 3, 4}));
}

TEST_F(ModelTest, RejectsWrongInputShape) {
  const ModelConfig c = toy_config();
  const ModelContext ctx = toy_context(c, 1);
  const ModelParams p = model_init(c, 2);
  EXPECT_THROW(predict(Tensor({1, 7, 4, 2}), p, c, ctx), DimensionError);
  EXPECT_THROW(predict(Tensor({1, 8, 5, 2}), p, c, ctx), DimensionError);
}

TEST_F(ModelTest, ForwardIsPure) {
  const ModelConfig c = toy_config();
  const ModelContext ctx = toy_context(c, 10);
  const ModelParams p = model_init(c, 11);
  std::mt19937_64 rng(12);
  const Tensor in = random_tensor({2, 8, 4, 2}, rng);
  const Tensor first = predict(in, p, c, ctx);
  EXPECT_EQ(predict(in, p, c, ctx), first);
}

TEST_F(ModelTest, NodePermutationEquivariance) {
  const ModelConfig c = toy_config();
  const ModelContext ctx = toy_context(c, 13);
  const ModelParams p = model_init(c, 14);
  std::mt19937_64 rng(15);
  const Tensor in = random_tensor({2, 8, 4, 2}, rng);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};  // new node i is old node perm[i]

  ModelContext pc;
  Tensor a({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) a(i, j) = (*ctx.predefined)(perm[i], perm[j]);
  pc.predefined = a;
  pc.generator_input = Tensor({4, c.generator_input_width});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t t = 0; t < c.generator_input_width; ++t) pc.generator_input(i, t) = ctx.generator_input(perm[i], t);
    pc.target_mean.push_back(ctx.target_mean[perm[i]]);
    pc.target_std.push_back(ctx.target_std[perm[i]]);
  }
  pc.finalize(true);
  Tensor pin(in.shape());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t q = 0; q < 2; ++q) pin[((b * 8 + t) * 4 + i) * 2 + q] = in[((b * 8 + t) * 4 + perm[i]) * 2 + q];

  const Tensor y = predict(in, p, c, ctx);
  const Tensor py = predict(pin, p, c, pc);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(py[(b * 3 + r) * 4 + i], y[(b * 3 + r) * 4 + perm[i]], 1e-12);
      }
}

// Gradient of sum(prediction (.) weight) against central differences over
// every parameter entry.
TEST_F(ModelTest, EndToEndGradientCheck) {
  for (bool with_generator : {true, false}) {
    ModelConfig c = toy_config();
    c.num_features = 1;
    c.use_generator = with_generator;
    const ModelContext ctx = toy_context(c, 16);
    ModelParams p = model_init(c, 17);
    // Non-zero biases exercise their gradients too.
    std::mt19937_64 rng(18);
    for (auto& [name, t] : p.named_tensors()) {
      if (name.find('b') != std::string::npos && t->rank() == 1) *t = random_tensor(t->shape(), rng, -0.3, 0.3);
    }
    const Tensor in = random_tensor({2, 8, 4, 1}, rng);
    const Tensor weight = random_tensor({4 * 2, 3}, rng);

    auto loss_of = [&](const ModelParams& q) {
      ad::Tape tape;
      const ForwardPass pass = forward(tape, in, q, c, ctx, false);
      double s = 0.0;
      for (std::size_t i = 0; i < weight.size(); ++i) s += pass.prediction.value()[i] * weight[i];
      return s;
    };
    ad::Tape tape;
    const ForwardPass pass = forward(tape, in, p, c, ctx, true);
    const ad::GradientMap grads =
        tape.backward(ad::sum(ad::hadamard(pass.prediction, tape.constant(weight))));

    const double eps = 1e-5;
    double worst = 0.0;
    auto named = p.named_tensors();
    for (std::size_t k = 0; k < named.size(); ++k) {
      Tensor& t = *named[k].second;
      const Tensor& g = grads.at(pass.params[k].id());
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double saved = t[i];
        t[i] = saved + eps;
        const double up = loss_of(p);
        t[i] = saved - eps;
        const double down = loss_of(p);
        t[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        worst = std::max(worst, std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric)));
      }
    }
    EXPECT_LT(worst, 1e-4) << "generator " << with_generator;
  }
}

TEST_F(ModelTest, NodeMajorRoundTrip) {
  std::mt19937_64 rng(19);
  const Tensor x = random_tensor({3, 5, 4}, rng);
  const Tensor nm = to_node_major(x);
  EXPECT_EQ(nm.shape(), (Shape{12, 5}));
  EXPECT_EQ(nm(2 * 3 + 1, 4), x[(1 * 5 + 4) * 4 + 2]);
  EXPECT_EQ(from_node_major(nm, 3, 4), x);
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  const ModelConfig c = toy_config();
  const ModelParams p = model_init(c, 20);
  const auto path = std::filesystem::temp_directory_path() / "stlgsl_model_ckpt.stck";
  save_checkpoint(path, c, p);
  const auto [lc, lp] = load_checkpoint(path);
  EXPECT_EQ(lc.dilations, c.dilations);
  EXPECT_EQ(lc.generator.k, c.generator.k);
  const auto a = p.named_tensors(), b = lp.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    for (std::size_t j = 0; j < a[i].second->size(); ++j) {
      EXPECT_EQ((*b[i].second)[j], static_cast<double>(static_cast<float>((*a[i].second)[j])));
    }
  }
  // Saving the reloaded parameters reproduces the file byte for byte.
  const auto again = path.string() + ".2";
  save_checkpoint(again, lc, lp);
  std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

}  // namespace
}  // namespace stlgsl
