#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stlgsl/data_io.hpp"
#include "stlgsl/error.hpp"
#include "stlgsl/graph_generator.hpp"
#include "test_util.hpp"

namespace stlgsl {
namespace {

using ad::Tape;
using ad::Var;

class GeneratorTest : public ::testing::Test {
 protected:
  PrecisionScope precision_{Precision::f64};
};

GeneratorParams hand_params(std::vector<Tensor> w, std::vector<Tensor> b, std::size_t k = 1) {
  GeneratorParams p;
  p.weights = std::move(w);
  p.biases = std::move(b);
  p.k = k;
  return p;
}

// Triple loop matmul, bias and ReLU between layers.
Tensor mlp_oracle(const Tensor& x, const GeneratorParams& p) {
  Tensor h = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Tensor& w = p.weights[l];
    Tensor out({h.rows(), w.cols()});
    for (std::size_t i = 0; i < h.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        double acc = p.biases[l][j];
        for (std::size_t q = 0; q < w.rows(); ++q) acc += h(i, q) * w(q, j);
        out(i, j) = (l + 1 < p.weights.size()) ? std::max(acc, 0.0) : acc;
      }
    }
    h = out;
  }
  return h;
}

// Per-row stable sort by descending value, then ascending column.
Tensor topk_oracle(const Tensor& s, std::size_t k) {
  const std::size_t m = s.rows();
  Tensor mask({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) cols.push_back(j);
    }
    std::stable_sort(cols.begin(), cols.end(),
                     [&](std::size_t a, std::size_t b) { return s(i, a) > s(i, b); });
    for (std::size_t r = 0; r < k; ++r) mask(i, cols[r]) = 1.0;
  }
  return mask;
}

TEST_F(GeneratorTest, IdentityNetworkPassesInputThrough) {
  std::mt19937_64 rng(1);
  const Tensor x = testing::random_tensor({5, 4}, rng);
  const auto p = hand_params({Tensor::identity(4)}, {Tensor({4})});
  EXPECT_EQ(mlp_forward(x, p), x);
}

TEST_F(GeneratorTest, ZeroInputZeroBiasGivesZeroEmbeddings) {
  std::mt19937_64 rng(2);
  GeneratorConfig cfg{.hidden = {6}, .embedding_dim = 3, .k = 1};
  const GeneratorParams p = make_generator_params(8, 4, cfg, rng);
  const Tensor e = mlp_forward(Tensor({4, 8}), p);
  EXPECT_EQ(e, Tensor({4, 3}));
}

TEST_F(GeneratorTest, TwoLayerToyMatchesScalarOracle) {
  const Tensor x = Tensor::matrix({{1, -2, 0.5}, {0, 1, 1}, {-1, 0.25, 2}});
  const auto p = hand_params({Tensor::matrix({{1, -1}, {0.5, 2}, {-1, 1}}), Tensor::matrix({{2}, {-3}})},
                             {Tensor::vector({0.1, -0.2}), Tensor::vector({0.5})});
  EXPECT_LT(max_abs_diff(mlp_forward(x, p), mlp_oracle(x, p)), 1e-12);

  std::mt19937_64 rng(3);
  GeneratorConfig cfg{.hidden = {7, 5}, .embedding_dim = 3, .k = 2};
  const GeneratorParams q = make_generator_params(9, 6, cfg, rng);
  const Tensor y = testing::random_tensor({6, 9}, rng);
  EXPECT_LT(max_abs_diff(mlp_forward(y, q), mlp_oracle(y, q)), 1e-12);
}

TEST_F(GeneratorTest, MakeParamsValidates) {
  std::mt19937_64 rng(4);
  GeneratorConfig cfg{.hidden = {8}, .embedding_dim = 4, .k = 3};
  EXPECT_NO_THROW(make_generator_params(10, 4, cfg, rng));
  EXPECT_THROW(make_generator_params(10, 3, cfg, rng), ConfigError);
  EXPECT_THROW(make_generator_params(4, 10, cfg, rng), ConfigError);
  cfg.k = 0;
  EXPECT_THROW(make_generator_params(10, 4, cfg, rng), ConfigError);
}

TEST_F(GeneratorTest, CosineSimilarityExamples) {
  const Tensor s = similarity_matrix(Tensor::matrix({{1, 0}, {1, 1}, {0, 3}, {2, 0}, {0, 0}}));
  EXPECT_NEAR(s(0, 1), 0.707107, 1e-6);
  EXPECT_DOUBLE_EQ(s(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(s(0, 3), 1.0);
  EXPECT_DOUBLE_EQ(s(1, 1), 1.0);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(s(4, j), 0.0);
    EXPECT_EQ(s(j, 4), 0.0);
  }
}

TEST_F(GeneratorTest, SimilarityIsSymmetricAndBounded) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = testing::random_dim(rng, 2, 20);
    const Tensor s = similarity_matrix(testing::random_tensor({m, testing::random_dim(rng, 1, 8)}, rng));
    EXPECT_LT(max_abs_diff(s, transpose(s)), 1e-12);
    for (double v : s.values()) {
      EXPECT_LE(std::abs(v), 1.0 + 1e-12);
    }
  }
}

TEST_F(GeneratorTest, TopkTieBreaksTowardLowerColumn) {
  const Tensor s = Tensor::matrix({{1, 0.5, 0.5}, {0.5, 1, 0.5}, {0.5, 0.5, 1}});
  const Tensor mask = topk_mask(s, 1);
  EXPECT_EQ(mask, Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {1, 0, 0}}));
}

TEST_F(GeneratorTest, TopkPicksRowMaximum) {
  const Tensor s = Tensor::matrix({{0, 0.1, 0.3}, {0.2, 0, 0.9}, {0.4, -0.1, 0}});
  const Tensor mask = topk_mask(s, 1);
  EXPECT_EQ(mask(1, 2), 1.0);
  EXPECT_EQ(mask(1, 0) + mask(1, 1), 0.0);
  EXPECT_EQ(topk_mask(s, 2), Tensor::matrix({{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}));
}

TEST_F(GeneratorTest, TopkMatchesSortOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = testing::random_dim(rng, 2, 30);
    const std::size_t k = testing::random_dim(rng, 1, m - 1);
    Tensor s = testing::random_tensor({m, m}, rng);
    // Coarse values force plenty of ties.
    if (trial % 2 == 0) {
      for (double& v : s.values()) v = std::round(v * 3.0) / 3.0;
    }
    const Tensor mask = topk_mask(s, k);
    EXPECT_EQ(mask, topk_oracle(s, k));
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m; ++j) row += mask(i, j);
      EXPECT_EQ(row, static_cast<double>(k));
      EXPECT_EQ(mask(i, i), 0.0);
    }
  }
}

TEST_F(GeneratorTest, TopkRejectsBadK) {
  const Tensor s({3, 3});
  EXPECT_THROW(topk_mask(s, 0), ConfigError);
  EXPECT_THROW(topk_mask(s, 3), ConfigError);
}

TEST_F(GeneratorTest, SaturatedMaskWithUnitSimilarity) {
  const Tensor x({4, 3}, 1.0);
  const auto p = hand_params({Tensor::identity(3)}, {Tensor({3})}, 3);
  const Tensor raw = generate_graph(x, p).raw;
  Tensor expected({4, 4}, 1.0);
  for (std::size_t i = 0; i < 4; ++i) expected(i, i) = 0.0;
  EXPECT_LT(max_abs_diff(raw, expected), 1e-12);
}

TEST_F(GeneratorTest, ThreeNodeHandExample) {
  const Tensor x = Tensor::matrix({{1, 0}, {1, 0}, {0, 1}});
  const auto p = hand_params({Tensor::identity(2)}, {Tensor({2})}, 1);
  const LatentGraph g = generate_graph(x, p);
  EXPECT_EQ(g.raw, Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {0, 0, 0}}));
  EXPECT_EQ(topk_mask(similarity_matrix(x), 1)(2, 0), 1.0);
}

TEST_F(GeneratorTest, NormalizationHandExamples) {
  EXPECT_EQ(normalize_graph(Tensor::matrix({{0, 2}, {0, 0}})), Tensor::matrix({{0, 1}, {1, 0}}));
  EXPECT_EQ(normalize_graph(Tensor::matrix({{-1, -2}, {-3, -0.5}})), Tensor({2, 2}));

  const Tensor star = normalize_graph(Tensor::matrix({{0, 1, 1}, {1, 0, 0}, {1, 0, 0}}));
  EXPECT_NEAR(star(0, 1), 0.707107, 1e-6);
  EXPECT_NEAR(star(0, 2), 0.707107, 1e-6);
  EXPECT_EQ(star(1, 2), 0.0);
}

TEST_F(GeneratorTest, RowNormalizationWithoutSymmetrisation) {
  const Tensor a = normalize_graph(Tensor::matrix({{0, 1, 3}, {2, 0, 0}, {0, 0, 0}}), false);
  EXPECT_EQ(a, Tensor::matrix({{0, 0.25, 0.75}, {1, 0, 0}, {0, 0, 0}}));
}

TEST_F(GeneratorTest, NormalizedGraphIsSymmetricAndInUnitRange) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = testing::random_dim(rng, 1, 50);
    Tensor raw = testing::random_tensor({m, m}, rng);
    if (trial % 5 == 0) {
      for (std::size_t j = 0; j < m; ++j) raw(0, j) = raw(j, 0) = -1.0;
    }
    const Tensor a = normalize_graph(raw);
    EXPECT_LT(max_abs_diff(a, transpose(a)), 1e-12);
    for (double v : a.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (trial % 5 == 0) {
      for (std::size_t j = 0; j < m; ++j) EXPECT_EQ(a(0, j), 0.0);
    }
  }
}

TEST_F(GeneratorTest, TapeAndTensorPathsAgree) {
  std::mt19937_64 rng(8);
  GeneratorConfig cfg{.hidden = {12}, .embedding_dim = 4, .k = 3};
  const GeneratorParams p = make_generator_params(16, 7, cfg, rng);
  const Tensor x = testing::random_tensor({7, 16}, rng);
  Tape tape;
  const BoundGenerator g = bind_generator(tape, p, false);
  const Var raw = generate_latent(tape.constant(x), g);
  const LatentGraph ref = generate_graph(x, p);
  EXPECT_EQ(raw.value(), ref.raw);
  EXPECT_EQ(normalize_graph(raw).value(), ref.normalized);
}

TEST_F(GeneratorTest, GeneratorGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (bool symmetrize : {true, false}) {
    GeneratorConfig cfg{.hidden = {5}, .embedding_dim = 3, .k = 2};
    const GeneratorParams p = make_generator_params(6, 5, cfg, rng);
    const Tensor x = testing::random_tensor({5, 6}, rng);
    const Tensor weight = testing::random_tensor({5, 5}, rng);
    std::vector<Tensor> inputs = {p.weights[0], p.biases[0], p.weights[1], p.biases[1]};
    const double err = ad::grad_check_many(
        [&](Tape& tape, std::span<const Var> v) {
          BoundGenerator g{{v[0], v[2]}, {v[1], v[3]}, p.k};
          const Var a = normalize_graph(generate_latent(tape.constant(x), g), symmetrize);
          return ad::sum(ad::hadamard(a, tape.constant(weight)));
        },
        inputs, 1e-5);
    EXPECT_LT(err, 1e-4) << "symmetrize=" << symmetrize;
  }
}

TEST_F(GeneratorTest, ZeroEpochInitIsNoOp) {
  std::mt19937_64 rng(10);
  GeneratorConfig cfg{.hidden = {8}, .embedding_dim = 4, .k = 2};
  const GeneratorParams p = make_generator_params(12, 6, cfg, rng);
  const Tensor x = testing::random_tensor({6, 12}, rng);
  const auto result = initialize_generator(p, x, Tensor::identity(6), 0, 1e-3);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    EXPECT_EQ(result.params.weights[l], p.weights[l]);
    EXPECT_EQ(result.params.biases[l], p.biases[l]);
  }
}

TEST_F(GeneratorTest, InitIsDeterministicAndDescends) {
  auto [series, planted] = generate_synthetic(20, 400, 4, 3);
  Tensor x({20, 280});
  for (std::size_t n = 0; n < 20; ++n)
    for (std::size_t t = 0; t < 280; ++t) x(n, t) = series.at(t, n, 0);
  GeneratorConfig cfg{.hidden = {32}, .embedding_dim = 8, .k = 8};
  std::mt19937_64 rng(11);
  const GeneratorParams p = make_generator_params(280, 20, cfg, rng);
  const auto a = initialize_generator(p, x, planted, 150, 1e-3);
  const auto b = initialize_generator(p, x, planted, 150, 1e-3);
  EXPECT_EQ(a.loss_history, b.loss_history);
  ASSERT_EQ(a.loss_history.size(), 151u);
  // Non-increasing up to a 5% band.
  for (std::size_t e = 1; e < a.loss_history.size(); ++e) {
    EXPECT_LE(a.loss_history[e], a.loss_history[e - 1] * 1.05) << "epoch " << e;
  }
  EXPECT_LT(a.loss_history.back(), a.loss_history.front());
}

TEST_F(GeneratorTest, InitRejectsMismatchedTarget) {
  std::mt19937_64 rng(12);
  GeneratorConfig cfg{.hidden = {8}, .embedding_dim = 4, .k = 2};
  const GeneratorParams p = make_generator_params(12, 6, cfg, rng);
  EXPECT_THROW(initialize_generator(p, testing::random_tensor({6, 12}, rng), Tensor::identity(5), 1, 1e-3),
               DimensionError);
}

TEST_F(GeneratorTest, InitDivergenceIsReported) {
  std::mt19937_64 rng(13);
  GeneratorConfig cfg{.hidden = {8}, .embedding_dim = 4, .k = 2};
  const GeneratorParams p = make_generator_params(12, 6, cfg, rng);
  Tensor x = testing::random_tensor({6, 12}, rng);
  Tensor target = Tensor::identity(6);
  target(0, 1) = std::nan("");
  EXPECT_THROW(initialize_generator(p, x, target, 5, 1e-3), NumericError);
}

TEST_F(GeneratorTest, EdgeSupportCounts) {
  const Tensor ref = Tensor::matrix({{0, 1, 1}, {1, 0, 0}, {1, 0, 0}});
  const Tensor learned = Tensor::matrix({{5, 0.2, 0}, {0.1, 0, 0.3}, {0, 0, 0}});
  const SupportStats s = edge_support(learned, ref);
  EXPECT_EQ(s.reference_edges, 4u);
  EXPECT_EQ(s.learned_edges, 3u);
  EXPECT_EQ(s.shared_edges, 2u);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.precision, 2.0 / 3.0);
}

}  // namespace
}  // namespace stlgsl
