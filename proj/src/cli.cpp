#include "stlgsl/cli.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "stlgsl/error.hpp"
#include "stlgsl/graph_generator.hpp"
#include "stlgsl/metrics.hpp"

namespace stlgsl::cli {
namespace fs = std::filesystem;

TrafficSeries load_series(const fs::path& path, NanPolicy policy) {
  if (!fs::exists(path)) throw DataError("dataset not found: " + path.string());
  if (path.extension() == ".csv") return read_series_csv(path, policy);
  return load_dataset(path, policy);
}

namespace {

double distance_spread(const Tensor& d) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t j = 0; j < d.cols(); ++j) {
      const double v = d(i, j);
      if (i == j || !std::isfinite(v)) continue;
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  if (n == 0) throw DataError("distance table lists no finite pairs");
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  if (!(var > 0.0)) throw DataError("distance table has zero spread; set data.sigma");
  return std::sqrt(var);
}

}  // namespace

std::unique_ptr<Experiment> prepare(const RunConfig& config) {
  TrafficSeries series = load_series(config.data.dataset, config.data.nan_policy);
  const std::size_t m = series.num_nodes;
  std::optional<Tensor> adjacency;
  if (config.data.adjacency) {
    if (!fs::exists(*config.data.adjacency)) {
      throw DataError("adjacency not found: " + config.data.adjacency->string());
    }
    adjacency = load_edge_csv(*config.data.adjacency, m);
  } else if (config.data.distances) {
    if (!fs::exists(*config.data.distances)) {
      throw DataError("distance table not found: " + config.data.distances->string());
    }
    const Tensor d = load_distance_csv(*config.data.distances, m);
    const double sigma = config.data.sigma > 0.0 ? config.data.sigma : distance_spread(d);
    adjacency = build_predefined_adjacency(d, sigma, config.data.kappa);
  }

  WindowedDataset data(std::move(series), config.data.window);
  for (const auto& w : data.warnings()) std::cerr << "warning: " << w << '\n';

  ModelConfig model = config.model;
  model.num_nodes = m;
  model.num_features = data.series().num_features;
  const auto [train_begin, train_end] = data.bounds(Split::kTrain);
  model.generator_input_width = train_end - train_begin;
  model.predefined_graph = adjacency.has_value();
  model.validate();

  ModelContext context = make_context(data, adjacency, model.symmetrize);
  return std::unique_ptr<Experiment>(
      new Experiment{std::move(data), std::move(adjacency), std::move(model), std::move(context)});
}

TrainOutcome train_experiment(const Experiment& exp, const TrainConfig& train,
                              const std::function<void(const HistoryRow&)>& on_epoch) {
  TrainOutcome out;
  ModelParams params = model_init(exp.model, train.seed);
  out.init_history =
      pre_initialize_generator(params, exp.model, exp.context, train.init_epochs, train.init_lr);
  Trainer trainer(exp.model, std::move(params), exp.context, train);
  out.result = trainer.train(exp.data, on_epoch);
  return out;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required();
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. train.lr=0.01");
  cmd->add_option("--seed", c.seed, "Seed (overrides the config and STLGSL_SEED)");
  cmd->add_option("--output-dir", c.output_dir, "Directory for artifacts");
}

RunConfig load_common(const Common& c) {
  RunConfig cfg = load_run_config(c.config, c.overrides);
  if (c.seed) {
    cfg.seed = c.seed;
    cfg.train.seed = *c.seed;
  }
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  set_precision(cfg.precision);
  return cfg;
}

/// Checkpoint settings must describe the same data layout as the config.
void check_compatible(const ModelConfig& ckpt, const Experiment& exp) {
  auto fail = [](const std::string& what) {
    throw ConfigError("checkpoint does not match the config: " + what);
  };
  const ModelConfig& m = exp.model;
  if (ckpt.num_nodes != m.num_nodes) {
    fail("num_nodes " + std::to_string(ckpt.num_nodes) + " vs " + std::to_string(m.num_nodes));
  }
  if (ckpt.num_features != m.num_features) fail("num_features differs");
  if (ckpt.input_steps != m.input_steps) fail("input_steps differs");
  if (ckpt.output_steps != m.output_steps) fail("output_steps differs");
  if (ckpt.predefined_graph && !exp.adjacency) fail("checkpoint needs a pre-defined adjacency");
  if (ckpt.use_generator && ckpt.generator_input_width != exp.context.generator_input.cols()) {
    fail("generator input width differs (was the split changed?)");
  }
}

struct Loaded {
  ModelConfig config;
  ModelParams params;
};

Loaded load_for(const std::string& path, Experiment& exp) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  auto [config, params] = load_checkpoint(path);
  check_compatible(config, exp);
  if (config.symmetrize != exp.model.symmetrize) exp.context.finalize(config.symmetrize);
  return {std::move(config), std::move(params)};
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_report(const MetricsReport& r, const std::string& label) {
  for (const auto& h : r.horizons) {
    std::cout << label << " horizon " << h.horizon << ": MAE " << fixed(h.mae, 4) << "  RMSE "
              << fixed(h.rmse, 4) << "  MAPE " << fixed(h.mape_percent, 2) << "%\n";
  }
  std::cout << label << " all: MAE " << fixed(r.overall.mae, 4) << "  RMSE "
            << fixed(r.overall.rmse, 4) << "  MAPE " << fixed(r.overall.mape_percent, 2) << "%\n";
}

MetricsReport evaluate(const Experiment& exp, Split split, const ModelParams& params,
                       const ModelConfig& config, const RunConfig& run) {
  if (exp.data.starts(split).empty()) throw DataError("the requested split has no windows");
  const SplitPredictions p = predict_split(exp.data, split, params, config, exp.context);
  return compute_metrics(p.pred, p.target, run.horizons,
                         {run.train.mask_nulls, run.train.null_value});
}

int cmd_synth(std::size_t nodes, std::size_t steps, std::size_t k_true,
              std::optional<std::uint64_t> seed, const std::string& out,
              const SyntheticOptions& opts) {
  const std::uint64_t s = resolve_seed(seed);
  auto [series, graph] = generate_synthetic(nodes, steps, k_true, s, opts);
  fs::create_directories(out);
  save_dataset(series, fs::path(out) / "series.stlg");
  save_edge_csv(graph, fs::path(out) / "adjacency.csv");
  std::cout << "wrote " << (fs::path(out) / "series.stlg").string() << " (" << nodes << " nodes, "
            << steps << " steps) and " << (fs::path(out) / "adjacency.csv").string() << '\n';
  return 0;
}

int cmd_convert(const std::string& input, const std::string& out, NanPolicy policy,
                std::size_t interval, const std::string& distances, double sigma, double kappa,
                const std::string& adjacency_out) {
  if (!fs::exists(input)) throw DataError("input not found: " + input);
  TrafficSeries series = read_series_csv(input, policy);
  series.interval_minutes = interval;
  save_dataset(series, out);
  std::cout << "wrote " << out << " (" << series.num_nodes << " nodes, " << series.num_steps
            << " steps)\n";
  if (!distances.empty()) {
    if (adjacency_out.empty()) throw ConfigError("--distances requires --adjacency-out");
    const Tensor d = load_distance_csv(distances, series.num_nodes);
    const Tensor a = build_predefined_adjacency(d, sigma > 0.0 ? sigma : distance_spread(d), kappa);
    save_edge_csv(a, adjacency_out);
    std::cout << "wrote " << adjacency_out << '\n';
  }
  return 0;
}

int cmd_init_graph(const Common& common, std::optional<std::size_t> epochs) {
  const RunConfig run = load_common(common);
  auto exp = prepare(run);
  if (!exp->model.use_generator) throw ConfigError("init-graph needs model.use_generator = true");
  if (!exp->adjacency) throw ConfigError("init-graph needs data.adjacency or data.distances");
  const std::size_t n = epochs.value_or(run.train.init_epochs);
  ModelParams params = model_init(exp->model, run.train.seed);
  ModelConfig model = exp->model;
  model.use_predefined_init = true;
  const auto history = pre_initialize_generator(params, model, exp->context, n, run.train.init_lr);

  fs::create_directories(run.output_dir);
  save_checkpoint(run.output_dir / "init.stck", exp->model, params);
  std::ofstream os(run.output_dir / "init_loss.csv");
  os << "epoch,loss\n" << std::setprecision(9);
  for (std::size_t e = 0; e < history.size(); ++e) os << e << ',' << history[e] << '\n';

  const Tensor graph = current_graph(params, exp->model, exp->context);
  const SupportStats s = edge_support(graph, *exp->adjacency);
  std::cout << "generator pre-fit: " << n << " epochs";
  if (!history.empty()) {
    std::cout << ", loss " << fixed(history.front(), 6) << " -> " << fixed(history.back(), 6);
  }
  std::cout << "\nedge support vs pre-defined graph: precision " << fixed(s.precision, 4)
            << ", recall " << fixed(s.recall, 4) << '\n';
  return 0;
}

int cmd_train(const Common& common, std::size_t repeats) {
  RunConfig run = load_common(common);
  auto exp = prepare(run);
  if (repeats < 1) throw ConfigError("--repeats must be >= 1");
  std::cout << "model: " << exp->model.num_nodes << " nodes, receptive field "
            << exp->model.receptive_field() << '\n';

  std::vector<MetricsReport> reports;
  const std::uint64_t base_seed = run.train.seed;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    TrainConfig tc = run.train;
    tc.seed = base_seed + rep;
    const fs::path dir = repeats == 1 ? run.output_dir : run.output_dir / ("run" + std::to_string(rep));
    fs::create_directories(dir);
    const TrainOutcome out = train_experiment(*exp, tc, [](const HistoryRow& h) {
      std::cout << "epoch " << h.epoch << "  train_loss " << fixed(h.train_loss, 5) << "  val_mae "
                << fixed(h.val_mae, 5) << "  lr " << h.lr << "  r " << h.r << std::endl;
    });
    save_checkpoint(dir / "checkpoint.stck", exp->model, out.result.best);
    write_history_csv(out.result.history, dir / "history.csv");
    {
      RunConfig resolved = run;
      resolved.seed = tc.seed;
      std::ofstream(dir / "config.json") << run_config_to_json(resolved) << '\n';
    }
    std::cout << "best epoch " << out.result.best_epoch << " (val MAE "
              << fixed(out.result.best_val_mae, 5) << ")"
              << (out.result.stopped_early ? ", stopped early" : "") << '\n';
    if (!exp->data.starts(Split::kTest).empty()) {
      reports.push_back(evaluate(*exp, Split::kTest, out.result.best, exp->model, run));
      print_report(reports.back(), "test");
    }
  }

  if (repeats > 1 && !reports.empty()) {
    std::ofstream os(run.output_dir / "repeats.csv");
    os << "horizon,mae_mean,mae_std,rmse_mean,rmse_std,mape_mean,mape_std\n";
    auto summarize = [&](auto pick, const std::string& label) {
      std::vector<std::array<double, 3>> v;
      for (const auto& r : reports) v.push_back(pick(r));
      std::array<double, 3> mean{}, sd{};
      for (const auto& x : v) {
        for (int i = 0; i < 3; ++i) mean[i] += x[i] / static_cast<double>(v.size());
      }
      for (const auto& x : v) {
        for (int i = 0; i < 3; ++i) {
          sd[i] += (x[i] - mean[i]) * (x[i] - mean[i]) / static_cast<double>(v.size() - 1);
        }
      }
      for (double& s : sd) s = std::sqrt(s);
      os << label << std::setprecision(8);
      for (int i = 0; i < 3; ++i) os << ',' << mean[i] << ',' << sd[i];
      os << '\n';
      std::cout << "repeats " << label << ": MAE " << fixed(mean[0], 3) << "±" << fixed(sd[0], 4)
                << "  RMSE " << fixed(mean[1], 3) << "±" << fixed(sd[1], 4) << "  MAPE "
                << fixed(mean[2], 2) << "±" << fixed(sd[2], 3) << '\n';
    };
    for (std::size_t i = 0; i < run.horizons.size(); ++i) {
      summarize(
          [i](const MetricsReport& r) {
            const auto& h = r.horizons[i];
            return std::array<double, 3>{h.mae, h.rmse, h.mape_percent};
          },
          std::to_string(run.horizons[i]));
    }
    summarize(
        [](const MetricsReport& r) {
          return std::array<double, 3>{r.overall.mae, r.overall.rmse, r.overall.mape_percent};
        },
        "all");
  }
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& split_name,
             const std::string& out) {
  const RunConfig run = load_common(common);
  auto exp = prepare(run);
  const Loaded ck = load_for(checkpoint, *exp);
  Split split = Split::kTest;
  if (split_name == "val") split = Split::kVal;
  else if (split_name == "train") split = Split::kTrain;
  else if (split_name != "test") throw ConfigError("--split must be train, val or test");
  for (std::size_t h : run.horizons) {
    if (h > ck.config.output_steps) {
      throw ConfigError("eval horizon " + std::to_string(h) + " exceeds the model's " +
                        std::to_string(ck.config.output_steps) + " output steps");
    }
  }
  const MetricsReport report = evaluate(*exp, split, ck.params, ck.config, run);
  const fs::path path = out.empty() ? run.output_dir / "report.csv" : fs::path(out);
  write_report_csv(report, path);
  print_report(report, split_name);
  const SplitPredictions ha = historical_average_baseline(exp->data, split);
  const MetricsReport ha_report = compute_metrics(ha.pred, ha.target, run.horizons,
                                                  {run.train.mask_nulls, run.train.null_value});
  std::cout << "historical average all: MAE " << fixed(ha_report.overall.mae, 4) << '\n';
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

int cmd_predict(const Common& common, const std::string& checkpoint, std::size_t at,
                const std::string& out) {
  const RunConfig run = load_common(common);
  auto exp = prepare(run);
  const Loaded ck = load_for(checkpoint, *exp);
  const TrafficSeries& s = exp->data.series();
  const std::size_t tin = ck.config.input_steps;
  if (at + 1 < tin || at >= s.num_steps) {
    throw ConfigError("--at " + std::to_string(at) + " must lie in [" + std::to_string(tin - 1) +
                      ", " + std::to_string(s.num_steps - 1) + "]");
  }
  const std::size_t m = s.num_nodes;
  const std::size_t f = s.num_features;
  Tensor inputs(Shape{1, tin, m, f});
  const std::size_t start = at + 1 - tin;
  for (std::size_t t = 0; t < tin; ++t) {
    for (std::size_t n = 0; n < m; ++n) {
      for (std::size_t c = 0; c < f; ++c) {
        inputs[(t * m + n) * f + c] = exp->data.normalizer().transform(s.at(start + t, n, c), n, c);
      }
    }
  }
  const Tensor pred = predict(inputs, ck.params, ck.config, exp->context);
  const Tensor table = pred.reshaped({ck.config.output_steps, m});
  const fs::path path =
      out.empty() ? run.output_dir / ("prediction_" + std::to_string(at) + ".csv") : fs::path(out);
  save_dense_csv(table, path);
  std::cout << "wrote " << path.string() << " (" << ck.config.output_steps << " x " << m << ")\n";
  return 0;
}

int cmd_export_graph(const Common& common, const std::string& checkpoint, const std::string& out) {
  const RunConfig run = load_common(common);
  auto exp = prepare(run);
  const Loaded ck = load_for(checkpoint, *exp);
  if (!ck.config.use_generator) {
    std::cout << "notice: checkpoint has no graph generator; exporting the normalised pre-defined "
                 "adjacency\n";
  }
  const Tensor graph = current_graph(ck.params, ck.config, exp->context);
  const fs::path path = out.empty() ? run.output_dir / "graph.csv" : fs::path(out);
  save_dense_csv(graph, path, 6);
  std::cout << "wrote " << path.string() << '\n';
  if (exp->adjacency) {
    const Tensor reference = normalize_graph(*exp->adjacency, ck.config.symmetrize);
    const SupportStats s = edge_support(graph, *exp->adjacency);
    Tensor diff = graph;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= reference[i];
    const double ref_norm = frobenius_norm(reference);
    const double rel = ref_norm > 0.0 ? frobenius_norm(diff) / ref_norm : frobenius_norm(diff);
    fs::path summary = path;
    summary.replace_filename(path.stem().string() + "_summary.csv");
    std::ofstream os(summary);
    os << "metric,value\n" << std::setprecision(8);
    os << "precision," << s.precision << "\nrecall," << s.recall << "\nlearned_edges,"
       << s.learned_edges << "\nreference_edges," << s.reference_edges << "\nshared_edges,"
       << s.shared_edges << "\nfrobenius_relative_error," << rel << '\n';
    std::cout << "vs pre-defined graph: precision " << fixed(s.precision, 4) << ", recall "
              << fixed(s.recall, 4) << ", Frobenius relative error " << fixed(rel, 4) << '\n';
  }
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Spatio-temporal traffic forecasting with a learned latent graph"};
  app.require_subcommand(1);

  std::size_t nodes = 20, steps = 2000, k_true = 4;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  SyntheticOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "Generate a planted-graph synthetic dataset");
  synth->add_option("--nodes", nodes, "Number of sensors")->capture_default_str();
  synth->add_option("--steps", steps, "Number of time steps")->capture_default_str();
  synth->add_option("--k-true", k_true, "Planted node degree")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Seed (falls back to STLGSL_SEED)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--graph-weight", synth_opts.graph_weight)->capture_default_str();
  synth->add_option("--signal-weight", synth_opts.signal_weight)->capture_default_str();
  synth->add_option("--noise-std", synth_opts.noise_std)->capture_default_str();
  synth->add_option("--period", synth_opts.period_steps)->capture_default_str();

  std::string conv_in, conv_out, conv_policy = "carry_forward", conv_dist, conv_adj_out;
  std::size_t conv_interval = 5;
  double conv_sigma = 0.0, conv_kappa = std::numeric_limits<double>::infinity();
  auto* convert = app.add_subcommand("convert", "Convert a series CSV to the binary format");
  convert->add_option("--input", conv_in, "Series CSV, one column per node")->required();
  convert->add_option("--out", conv_out, "Output STLG file")->required();
  convert->add_option("--nan-policy", conv_policy)
      ->check(CLI::IsMember({"carry_forward", "zero_fill"}))
      ->capture_default_str();
  convert->add_option("--interval", conv_interval, "Minutes per step")->capture_default_str();
  convert->add_option("--distances", conv_dist, "Road distance CSV `src,dst,distance`");
  convert->add_option("--sigma", conv_sigma, "Kernel width (0: std of distances)");
  convert->add_option("--kappa", conv_kappa, "Distance cut-off");
  convert->add_option("--adjacency-out", conv_adj_out, "Output edge CSV");

  Common init_c;
  std::optional<std::size_t> init_epochs;
  auto* init = app.add_subcommand("init-graph", "Pre-fit the graph generator to the given graph");
  add_common(init, init_c);
  init->add_option("--epochs", init_epochs, "Override train.init_epochs");

  Common train_c;
  std::size_t repeats = 1;
  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_c);
  train->add_option("--repeats", repeats, "Independent runs with seeds seed..seed+n-1")
      ->capture_default_str();

  Common eval_c;
  std::string eval_ckpt, eval_split = "test", eval_out;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--split", eval_split)->capture_default_str();
  eval->add_option("--out", eval_out, "Report CSV");

  Common pred_c;
  std::string pred_ckpt, pred_out;
  std::size_t pred_at = 0;
  auto* pred = app.add_subcommand("predict", "Forecast from the window ending at a time step");
  add_common(pred, pred_c);
  pred->add_option("--checkpoint", pred_ckpt)->required();
  pred->add_option("--at", pred_at, "Index of the last input step")->required();
  pred->add_option("--out", pred_out, "Output CSV");

  Common graph_c;
  std::string graph_ckpt, graph_out;
  auto* graph = app.add_subcommand("export-graph", "Write the latent graph as a dense CSV");
  add_common(graph, graph_c);
  graph->add_option("--checkpoint", graph_ckpt)->required();
  graph->add_option("--out", graph_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*synth) return cmd_synth(nodes, steps, k_true, synth_seed, synth_out, synth_opts);
    if (*convert) {
      return cmd_convert(conv_in, conv_out,
                         conv_policy == "zero_fill" ? NanPolicy::kZeroFill : NanPolicy::kCarryForward,
                         conv_interval, conv_dist, conv_sigma, conv_kappa, conv_adj_out);
    }
    if (*init) return cmd_init_graph(init_c, init_epochs);
    if (*train) return cmd_train(train_c, repeats);
    if (*eval) return cmd_eval(eval_c, eval_ckpt, eval_split, eval_out);
    if (*pred) return cmd_predict(pred_c, pred_ckpt, pred_at, pred_out);
    if (*graph) return cmd_export_graph(graph_c, graph_ckpt, graph_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}

}  // namespace stlgsl::cli
