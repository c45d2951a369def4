#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "stlgsl/cli.hpp"
#include "stlgsl/error.hpp"

namespace stlgsl {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("stlgsl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "stlgsl");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    ::testing::internal::CaptureStdout();
    ::testing::internal::CaptureStderr();
    const int code = cli::run(static_cast<int>(argv.size()), argv.data());
    out_ = ::testing::internal::GetCapturedStdout();
    err_ = ::testing::internal::GetCapturedStderr();
    return code;
  }

  // Small synthetic dataset plus a config that trains in well under a second.
  fs::path tiny_setup(const std::string& extra_model = "") {
    EXPECT_EQ(run({"synth", "--nodes", "6", "--steps", "300", "--k-true", "2", "--seed", "3", "--out",
                   (dir_ / "data").string()}),
              0)
        << err_;
    const fs::path cfg = dir_ / "config.json";
    std::ofstream(cfg) << R"({
  "data": {"dataset": "data/series.stlg", "adjacency": "data/adjacency.csv", "batch_size": 16},
  "model": {"input_steps": 4, "output_steps": 3, "blocks": 2, "dilations": [1, 2],
            "residual_channels": 4, "skip_channels": 4, "head_channels": 4, "diffusion_steps": 1,
            "generator": {"hidden": [8], "embedding_dim": 4, "k": 3})"
                       << extra_model << R"(},
  "train": {"max_epochs": 2, "patience": 2, "init_epochs": 20, "step_size": 3},
  "eval": {"horizons": [1, 3]},
  "seed": 5,
  "output_dir": "out"
})";
    return cfg;
  }

  fs::path dir_;
  std::string out_, err_;
};

TEST_F(CliTest, SynthIsReproducible) {
  ASSERT_EQ(run({"synth", "--nodes", "20", "--steps", "2000", "--seed", "7", "--out", (dir_ / "a").string()}), 0);
  ASSERT_EQ(run({"synth", "--nodes", "20", "--steps", "2000", "--seed", "7", "--out", (dir_ / "b").string()}), 0);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "series.stlg"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "adjacency.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "series.stlg"), slurp(dir_ / "b" / "series.stlg"));
  EXPECT_EQ(slurp(dir_ / "a" / "adjacency.csv"), slurp(dir_ / "b" / "adjacency.csv"));
  ASSERT_EQ(run({"synth", "--nodes", "20", "--steps", "2000", "--seed", "8", "--out", (dir_ / "c").string()}), 0);
  EXPECT_NE(slurp(dir_ / "a" / "series.stlg"), slurp(dir_ / "c" / "series.stlg"));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({"synth", "--nodes", "1", "--steps", "2000", "--out", dir_.string()}), 2);
  EXPECT_EQ(run({"train"}), 2);
  EXPECT_EQ(run({"bogus"}), 2);
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_EQ(run({"train", "--config", (dir_ / "missing.json").string()}), 2);
  std::ofstream(dir_ / "c.json") << R"({"data": {"dataset": "nope.stlg"}})";
  EXPECT_EQ(run({"train", "--config", (dir_ / "c.json").string()}), 3);
}

TEST_F(CliTest, ConvertCsv) {
  std::ofstream(dir_ / "s.csv") << "a,b,c\n1,2,3\n4,,6\n7,8,9\n";
  std::ofstream(dir_ / "d.csv") << "src,dst,value\n0,1,1\n1,0,1\n1,2,2\n2,1,2\n";
  ASSERT_EQ(run({"convert", "--input", (dir_ / "s.csv").string(), "--out", (dir_ / "s.stlg").string(),
                 "--distances", (dir_ / "d.csv").string(), "--sigma", "1", "--adjacency-out",
                 (dir_ / "adj.csv").string()}),
            0)
      << err_;
  const TrafficSeries s = load_dataset(dir_ / "s.stlg");
  EXPECT_EQ(s.num_nodes, 3u);
  EXPECT_EQ(s.values, (std::vector<double>{1, 2, 3, 4, 2, 6, 7, 8, 9}));
  const Tensor a = load_edge_csv(dir_ / "adj.csv", 3);
  EXPECT_NEAR(a(0, 1), std::exp(-1.0), 1e-6);
  EXPECT_NEAR(a(1, 2), std::exp(-4.0), 1e-6);
  EXPECT_EQ(a(0, 2), 0.0);
}

TEST_F(CliTest, TrainTwiceIsByteIdentical) {
  const fs::path cfg = tiny_setup();
  ASSERT_EQ(run({"train", "--config", cfg.string()}), 0) << err_;
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output-dir", (dir_ / "again").string()}), 0) << err_;
  EXPECT_NE(out_.find("test horizon 3"), std::string::npos);
  const std::string history = slurp(dir_ / "out" / "history.csv");
  EXPECT_EQ(history.substr(0, history.find('\n')), "epoch,train_loss,val_mae,val_rmse,val_mape,lr,r");
  EXPECT_EQ(history, slurp(dir_ / "again" / "history.csv"));
  EXPECT_EQ(slurp(dir_ / "out" / "checkpoint.stck"), slurp(dir_ / "again" / "checkpoint.stck"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "config.json"));

  ASSERT_EQ(run({"train", "--config", cfg.string(), "--seed", "6", "--output-dir", (dir_ / "other").string()}), 0);
  EXPECT_NE(history, slurp(dir_ / "other" / "history.csv"));
}

TEST_F(CliTest, RepeatsWriteSummary) {
  const fs::path cfg = tiny_setup();
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--repeats", "2", "--set", "train.max_epochs=1",
                 "--set", "train.patience=1"}),
            0)
      << err_;
  EXPECT_TRUE(fs::exists(dir_ / "out" / "run0" / "checkpoint.stck"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "run1" / "history.csv"));
  EXPECT_NE(out_.find("MAE "), std::string::npos);
  EXPECT_NE(out_.find("±"), std::string::npos);
  const std::string summary = slurp(dir_ / "out" / "repeats.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "horizon,mae_mean,mae_std,rmse_mean,rmse_std,mape_mean,mape_std");
}

TEST_F(CliTest, EvalPredictAndExport) {
  const fs::path cfg = tiny_setup();
  ASSERT_EQ(run({"train", "--config", cfg.string()}), 0) << err_;
  const std::string ckpt = (dir_ / "out" / "checkpoint.stck").string();

  ASSERT_EQ(run({"eval", "--config", cfg.string(), "--checkpoint", ckpt}), 0) << err_;
  const std::string report = slurp(dir_ / "out" / "report.csv");
  EXPECT_EQ(report.substr(0, report.find('\n')), "horizon,mae,rmse,mape_percent");
  EXPECT_NE(report.find("\n3,"), std::string::npos);
  EXPECT_NE(out_.find("historical average"), std::string::npos);
  EXPECT_EQ(run({"eval", "--config", cfg.string(), "--checkpoint", ckpt, "--set", "eval.horizons=[12]"}), 2);
  EXPECT_EQ(run({"eval", "--config", cfg.string(), "--checkpoint", (dir_ / "none.stck").string()}), 3);
  EXPECT_EQ(run({"eval", "--config", cfg.string(), "--checkpoint", ckpt, "--set", "model.input_steps=3"}),
            2);

  ASSERT_EQ(run({"predict", "--config", cfg.string(), "--checkpoint", ckpt, "--at", "100"}), 0) << err_;
  const Tensor pred = load_dense_csv(dir_ / "out" / "prediction_100.csv");
  EXPECT_EQ(pred.shape(), (Shape{3, 6}));
  EXPECT_EQ(run({"predict", "--config", cfg.string(), "--checkpoint", ckpt, "--at", "2"}), 2);

  ASSERT_EQ(run({"export-graph", "--config", cfg.string(), "--checkpoint", ckpt}), 0) << err_;
  const Tensor graph = load_dense_csv(dir_ / "out" / "graph.csv");
  EXPECT_EQ(graph.shape(), (Shape{6, 6}));
  auto [config, params] = load_checkpoint(ckpt);
  const auto exp = cli::prepare(load_run_config(cfg));
  EXPECT_LT(max_abs_diff(graph, current_graph(params, config, exp->context)), 1e-6);
  EXPECT_NE(slurp(dir_ / "out" / "graph_summary.csv").find("frobenius_relative_error"), std::string::npos);
}

double summary_value(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + ",", 0) == 0) return std::stod(line.substr(key.size() + 1));
  }
  return -1.0;
}

TEST_F(CliTest, InitGraphMovesTowardPredefinedGraph) {
  const fs::path cfg = tiny_setup();
  ASSERT_EQ(run({"init-graph", "--config", cfg.string(), "--epochs", "0", "--output-dir", (dir_ / "raw").string()}), 0)
      << err_;
  ASSERT_EQ(run({"export-graph", "--config", cfg.string(), "--checkpoint", (dir_ / "raw" / "init.stck").string(),
                 "--out", (dir_ / "raw.csv").string()}),
            0);
  ASSERT_EQ(run({"init-graph", "--config", cfg.string(), "--epochs", "300"}), 0) << err_;
  EXPECT_NE(out_.find("recall"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "init_loss.csv"));
  ASSERT_EQ(run({"export-graph", "--config", cfg.string(), "--checkpoint", (dir_ / "out" / "init.stck").string(),
                 "--out", (dir_ / "fit.csv").string()}),
            0);
  const double before = summary_value(slurp(dir_ / "raw_summary.csv"), "frobenius_relative_error");
  const double after = summary_value(slurp(dir_ / "fit_summary.csv"), "frobenius_relative_error");
  EXPECT_GE(before, 0.0);
  EXPECT_LT(after, before);
}

TEST_F(CliTest, WithoutGeneratorExportsPredefinedGraph) {
  const fs::path cfg = tiny_setup(R"(, "use_generator": false)");
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--set", "train.max_epochs=1", "--set", "train.patience=1"}), 0)
      << err_;
  ASSERT_EQ(run({"export-graph", "--config", cfg.string(), "--checkpoint",
                 (dir_ / "out" / "checkpoint.stck").string()}),
            0);
  EXPECT_NE(out_.find("notice"), std::string::npos);
  const Tensor graph = load_dense_csv(dir_ / "out" / "graph.csv");
  const Tensor expected = normalize_graph(load_edge_csv(dir_ / "data" / "adjacency.csv", 6));
  EXPECT_LT(max_abs_diff(graph, expected), 1e-6);
}

// A constant series with every weight zeroed: the model emits the node mean,
// which equals the target, so the report is exactly zero.
TEST_F(CliTest, EvalOfExactForecasterReportsZero) {
  TrafficSeries s;
  s.num_nodes = 3;
  s.num_features = 1;
  s.num_steps = 400;
  s.values.assign(1200, 42.0);
  save_dataset(s, dir_ / "const.stlg");
  save_edge_csv(Tensor::matrix({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}}), dir_ / "adj.csv");
  std::ofstream(dir_ / "c.json") << R"({
  "data": {"dataset": "const.stlg", "adjacency": "adj.csv"},
  "model": {"use_generator": false, "residual_channels": 4, "skip_channels": 4, "head_channels": 4},
  "output_dir": "out"
})";
  const RunConfig run_cfg = load_run_config(dir_ / "c.json");
  const auto exp = cli::prepare(run_cfg);
  ModelParams p = model_init(exp->model, 1);
  for (auto& [name, t] : p.named_tensors()) t->fill(0.0);
  save_checkpoint(dir_ / "zero.stck", exp->model, p);
  ASSERT_EQ(run({"eval", "--config", (dir_ / "c.json").string(), "--checkpoint", (dir_ / "zero.stck").string()}), 0)
      << err_;
  std::istringstream report(slurp(dir_ / "out" / "report.csv"));
  std::string line;
  std::getline(report, line);
  int rows = 0;
  while (std::getline(report, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.find(',')), ",0,0,0") << line;
  }
  EXPECT_EQ(rows, 4);
}

}  // namespace
}  // namespace stlgsl
