// Command-line front end: synth, mask, train, impute, evaluate, report.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "stimpute/data_io.hpp"
#include "stimpute/evaluation.hpp"
#include "stimpute/fsutil.hpp"
#include "stimpute/training.hpp"

namespace fs = std::filesystem;
using namespace stimpute;

namespace {

struct GraphFlags {
  std::string path;
  std::string distances;
  std::string kind = "auto";
};

void add_graph_flags(CLI::App* cmd, GraphFlags& flags, bool required) {
  auto* opt = cmd->add_option("--graph", flags.path, "graph triplet file (src,dst,weight)");
  if (required) opt->required();
  cmd->add_option("--distances", flags.distances,
                  "distance triplet file in miles (enables distance-based neighborhoods)");
  cmd->add_option("--graph-kind", flags.kind,
                  "force graph interpretation: auto, distance or connectivity")
      ->check(CLI::IsMember({"auto", "distance", "connectivity"}));
}

TrafficGraph load_graph_flags(const GraphFlags& flags) {
  std::optional<GraphKind> kind;
  if (flags.kind == "distance") kind = GraphKind::SensorDistance;
  if (flags.kind == "connectivity") kind = GraphKind::LinkConnectivity;
  TrafficGraph g = load_graph(flags.path, kind);
  if (!flags.distances.empty()) {
    g.distances = load_distances(flags.distances, g);
    if (flags.kind == "auto") g.kind = GraphKind::SensorDistance;
  }
  return g;
}

std::pair<int, int> parse_shape(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos)
    throw CLI::ValidationError("--shape", "expected N x T, e.g. 10x72");
  try {
    const int n = std::stoi(s.substr(0, x));
    const int t = std::stoi(s.substr(x + 1));
    if (n < 1 || t < 1) throw std::invalid_argument(s);
    return {n, t};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--shape", "expected N x T, e.g. 10x72");
  }
}

std::vector<double> parse_ratio_list(const std::vector<std::string>& tokens) {
  std::vector<double> out;
  for (const auto& tok : tokens) {
    std::istringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (part.empty()) continue;
      out.push_back(std::stod(part));
    }
  }
  return out;
}

std::vector<MissingPattern> parse_pattern_list(const std::vector<std::string>& tokens) {
  std::vector<MissingPattern> out;
  for (const auto& tok : tokens) {
    std::istringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (part.empty()) continue;
      out.push_back(parse_pattern(part));
    }
  }
  return out;
}

std::string checkpoint_path(const std::string& model_arg) {
  if (fs::is_directory(model_arg)) return (fs::path(model_arg) / "checkpoint.stim").string();
  return model_arg;
}

// ---------------------------------------------------------------- synth --

struct SynthArgs {
  int nodes = 10;
  int steps = 2880;
  std::uint64_t seed = 0;
  double sigma = 1.0;
  double common_noise = 0.5;
  int steps_per_day = 288;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const auto data = synthesize_dataset(a.nodes, a.steps, a.seed, a.sigma,
                                       a.steps_per_day, a.common_noise);
  fs::create_directories(a.out);
  const auto speeds_path = (fs::path(a.out) / "speeds.csv").string();
  const auto graph_path = (fs::path(a.out) / "graph.csv").string();
  save_speed_matrix(data.speeds, speeds_path);
  save_graph(data.graph, graph_path);

  const auto summary = describe_dataset(data.speeds);
  std::printf("wrote %s (%d nodes x %d steps) and %s\n", speeds_path.c_str(),
              summary.nodes, summary.steps, graph_path.c_str());
  return 0;
}

// ----------------------------------------------------------------- mask --

struct MaskArgs {
  std::string pattern;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::string shape;
  std::string out;
  GraphFlags graph;
};

int cmd_mask(const MaskArgs& a) {
  const auto [nodes, steps] = parse_shape(a.shape);
  const MissingSpec spec{parse_pattern(a.pattern), a.ratio, a.seed};
  std::optional<TrafficGraph> graph;
  if (!a.graph.path.empty()) {
    graph = load_graph_flags(a.graph);
    if (graph->size() != nodes)
      throw ShapeError("graph has " + std::to_string(graph->size()) +
                       " nodes but --shape says " + std::to_string(nodes));
  }
  const auto mask = make_mask(spec, nodes, steps, graph ? &*graph : nullptr);
  save_mask(mask, a.out);
  std::printf("wrote %s (%s, ratio %.3f, %d x %d)\n", a.out.c_str(),
              a.pattern.c_str(), a.ratio, nodes, steps);
  return 0;
}

// ---------------------------------------------------------------- train --

struct TrainArgs {
  std::string data;
  GraphFlags graph;
  std::string avail;
  std::string pattern = "rm";
  std::string out;
  std::uint64_t seed = 0;
  int window = 72;
  int blocks = 2;
  int diffusion_steps = 2;
  int hidden = 128;
  int out_dim = 64;
  int gse_hidden = 32;
  double lr = 1e-4;
  int batch = 4;
  int iters = 0;
  bool no_gse = false;
  bool no_dgcn = false;
  bool no_blstm = false;
  double clip_norm = 0.0;
  double lr_decay = 1.0;
  int val_every = 100;
  double val_ratio = 0.4;
  int patience = 0;
  int jobs = 1;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
};

void write_config_snapshot(const TrainArgs& a, const std::string& path) {
  std::ostringstream out;
  out << "data = " << a.data << "\n"
      << "graph = " << a.graph.path << "\n"
      << "pattern = " << a.pattern << "\n"
      << "window = " << a.window << "\n"
      << "blocks = " << a.blocks << "\n"
      << "diffusion_steps = " << a.diffusion_steps << "\n"
      << "hidden = " << a.hidden << "\n"
      << "out_dim = " << a.out_dim << "\n"
      << "gse_hidden = " << a.gse_hidden << "\n"
      << "lr = " << a.lr << "\n"
      << "batch = " << a.batch << "\n"
      << "iters = " << a.iters << "\n"
      << "seed = " << a.seed << "\n"
      << "use_gse = " << (a.no_gse ? 0 : 1) << "\n"
      << "use_dgcn = " << (a.no_dgcn ? 0 : 1) << "\n"
      << "use_blstm = " << (a.no_blstm ? 0 : 1) << "\n"
      << "clip_norm = " << a.clip_norm << "\n"
      << "lr_decay = " << a.lr_decay << "\n"
      << "val_every = " << a.val_every << "\n"
      << "val_ratio = " << a.val_ratio << "\n"
      << "patience = " << a.patience << "\n"
      << "train_fraction = " << a.train_fraction << "\n"
      << "val_fraction = " << a.val_fraction << "\n"
      << "test_fraction = " << a.test_fraction << "\n";
  atomic_write_file(path, out.str());
}

int cmd_train(const TrainArgs& a) {
  const auto speeds = load_speed_matrix(a.data);
  const auto graph = align_graph(load_graph_flags(a.graph), speeds);

  std::optional<Eigen::MatrixXi> avail;
  if (!a.avail.empty()) {
    const auto mask = load_mask(a.avail);
    if (mask.values.rows() != speeds.values.rows() ||
        mask.values.cols() != speeds.values.cols())
      throw ShapeError("availability mask shape does not match the data");
    avail = mask.values;
  }

  const auto parts =
      split(speeds.values, SplitSpec{a.train_fraction, a.val_fraction, a.test_fraction});

  ModelConfig mcfg;
  mcfg.nodes = speeds.nodes();
  mcfg.window = a.window;
  mcfg.blocks = a.blocks;
  mcfg.diffusion_steps = a.diffusion_steps;
  mcfg.hidden = a.hidden;
  mcfg.out_dim = a.out_dim;
  mcfg.gse_hidden = a.gse_hidden;
  mcfg.use_gse = !a.no_gse;
  mcfg.use_dgcn = !a.no_dgcn;
  mcfg.use_blstm = !a.no_blstm;

  TrainConfig tcfg;
  tcfg.learning_rate = a.lr;
  tcfg.batch_size = a.batch;
  tcfg.iterations = a.iters;
  tcfg.pattern = parse_pattern(a.pattern);
  tcfg.seed = a.seed;
  tcfg.clip_norm = a.clip_norm;
  tcfg.lr_decay = a.lr_decay;
  tcfg.val_every = a.val_every;
  tcfg.val_ratio = a.val_ratio;
  tcfg.patience = a.patience;
  tcfg.jobs = a.jobs;

  fs::create_directories(a.out);
  write_config_snapshot(a, (fs::path(a.out) / "config.txt").string());

  std::ostringstream losslog;
  losslog << "iteration,loss,val_rmse\n";
  const auto progress = [&](int it, double loss, double val) {
    losslog << it << ',';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", loss);
    losslog << buf << ',';
    if (std::isfinite(val)) {
      std::snprintf(buf, sizeof(buf), "%.6f", val);
      losslog << buf;
    }
    losslog << '\n';
    if (it % 100 == 0 || it == 1) {
      if (std::isfinite(val))
        std::printf("iter %6d  loss %12.3f  val_rmse %8.4f\n", it, loss, val);
      else
        std::printf("iter %6d  loss %12.3f\n", it, loss);
      std::fflush(stdout);
    }
  };

  const Eigen::MatrixXi* train_avail = nullptr;
  Eigen::MatrixXi avail_slice;
  if (avail) {
    avail_slice = avail->leftCols(parts.train.cols());
    train_avail = &avail_slice;
  }

  const auto result =
      train(parts.train, parts.val, graph, mcfg, tcfg, train_avail, progress);

  atomic_write_file((fs::path(a.out) / "loss.csv").string(), losslog.str());
  save_checkpoint(result.model, (fs::path(a.out) / "checkpoint.stim").string());

  if (result.diverged)
    throw NumericError("training diverged: " + result.divergence_note +
                       " (last finite checkpoint written)");

  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& [it, rmse] : result.val_history)
    if (!(rmse >= best)) best = rmse;  // min, NaN-safe start
  if (std::isfinite(best))
    std::printf("done: %zu iterations, best val_rmse %.4f, checkpoint %s\n",
                result.loss_history.size(), best,
                (fs::path(a.out) / "checkpoint.stim").c_str());
  else
    std::printf("done: %zu iterations, checkpoint %s\n",
                result.loss_history.size(),
                (fs::path(a.out) / "checkpoint.stim").c_str());
  return 0;
}

// --------------------------------------------------------------- impute --

struct ImputeArgs {
  std::string model;
  std::string data;
  GraphFlags graph;
  std::string out;
};

int cmd_impute(const ImputeArgs& a) {
  const auto model = load_checkpoint(checkpoint_path(a.model));
  const auto speeds = load_speed_matrix(a.data);
  const auto graph = align_graph(load_graph_flags(a.graph), speeds);
  if (model.config.nodes != speeds.nodes())
    throw ShapeError("model was trained on " + std::to_string(model.config.nodes) +
                     " nodes but the data has " + std::to_string(speeds.nodes()));

  const auto fixed = compute_transitions(graph.adjacency);
  SpeedMatrix out = speeds;
  out.values = sliding_impute(model, fixed, speeds.values, model.config.window);
  save_speed_matrix(out, a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

// ------------------------------------------------------------- evaluate --

struct EvaluateArgs {
  std::string model;
  std::string data;
  GraphFlags graph;
  std::vector<std::string> patterns{"rm", "tcm", "scm", "bm"};
  std::vector<std::string> ratios{"0.2,0.4,0.6,0.8"};
  std::uint64_t seed = 0;
  std::string out;
  int period = 288;
  int jobs = 1;
  bool dump_pairs = false;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::string export_node;
  std::vector<std::string> export_times{"0"};
  int export_block = -1;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto model = load_checkpoint(checkpoint_path(a.model));
  const auto speeds = load_speed_matrix(a.data);
  const auto graph = align_graph(load_graph_flags(a.graph), speeds);
  if (model.config.nodes != speeds.nodes())
    throw ShapeError("model was trained on " + std::to_string(model.config.nodes) +
                     " nodes but the data has " + std::to_string(speeds.nodes()));

  const auto parts = split(
      speeds.values, SplitSpec{a.train_fraction, a.val_fraction, a.test_fraction});
  const auto patterns = parse_pattern_list(a.patterns);
  const auto ratios = parse_ratio_list(a.ratios);

  const auto grid = run_experiment(model, graph, parts.test, patterns, ratios,
                                   a.seed, a.period, a.jobs);
  fs::create_directories(a.out);
  const auto report_path = (fs::path(a.out) / "report.csv").string();
  atomic_write_file(report_path, format_report(grid));
  std::printf("wrote %s (%zu rows)\n", report_path.c_str(), grid.size());

  if (a.dump_pairs) {
    const auto fixed = compute_transitions(graph.adjacency);
    const auto nodes = static_cast<int>(parts.test.rows());
    const auto horizon = static_cast<int>(parts.test.cols());
    std::size_t cell = 0;
    for (std::size_t pi = 0; pi < patterns.size(); ++pi)
      for (std::size_t ri = 0; ri < ratios.size(); ++ri, ++cell) {
        const MaskMatrix mask =
            make_mask({patterns[pi], ratios[ri], Rng(a.seed).fork(pi * 97 + ri).seed()},
                      nodes, horizon, &graph);
        const Eigen::MatrixXd masked = apply_mask(parts.test, mask);
        const Eigen::MatrixXd pred =
            sliding_impute(model, fixed, masked, model.config.window);
        std::ostringstream pairs;
        pairs << "true,predicted\n";
        char buf[80];
        for (int v = 0; v < nodes; ++v)
          for (int t = 0; t < horizon; ++t) {
            if (mask.values(v, t) != 0 || parts.test(v, t) == 0.0) continue;
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", parts.test(v, t), pred(v, t));
            pairs << buf;
          }
        char name[80];
        std::snprintf(name, sizeof(name), "pairs_%s_%02d.csv",
                      to_string(patterns[pi]).c_str(),
                      static_cast<int>(ratios[ri] * 100 + 0.5));
        atomic_write_file((fs::path(a.out) / name).string(), pairs.str());
      }
  }

  if (!a.export_node.empty()) {
    if (parts.test.cols() < model.config.window)
      throw DataError("test slice is shorter than the model window");
    std::vector<int> times;
    for (const auto& tok : a.export_times) {
      std::istringstream ss(tok);
      std::string part;
      while (std::getline(ss, part, ','))
        if (!part.empty()) times.push_back(std::stoi(part));
    }
    const MaskMatrix mask = make_mask(
        {patterns.empty() ? MissingPattern::RM : patterns.front(),
         ratios.empty() ? 0.4 : ratios.front(), Rng(a.seed).fork(0xE0).seed()},
        static_cast<int>(parts.test.rows()), model.config.window, &graph);
    const Eigen::MatrixXd window =
        apply_mask(parts.test.leftCols(model.config.window), mask);
    const auto exported = export_transition_weights(model, graph, window,
                                                    a.export_node, times,
                                                    a.export_block);
    const auto path =
        (fs::path(a.out) / ("transitions_" + a.export_node + ".csv")).string();
    atomic_write_file(path, format_transition_export(exported, graph.node_ids));
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

// --------------------------------------------------------------- report --

struct ReportArgs {
  std::string report;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  std::ifstream in(a.report);
  if (!in) throw DataError("cannot open " + a.report);
  std::string line;
  if (!std::getline(in, line) ||
      line != "pattern,ratio,model,mae,rmse,mape,n,excluded_mape")
    throw DataError(a.report + ": not a metrics report (unexpected header)");

  struct Row {
    std::string pattern, model;
    double ratio;
    double metric[3];
  };
  std::vector<Row> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::vector<std::string> f;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 8)
      throw DataError(a.report + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      rows.push_back(Row{f[0], f[2], std::stod(f[1]),
                         {std::stod(f[3]), std::stod(f[4]), std::stod(f[5])}});
    } catch (const std::exception&) {
      throw DataError(a.report + ":" + std::to_string(lineno) + ": bad numeric field");
    }
  }
  if (rows.empty()) throw DataError(a.report + ": no data rows");

  std::vector<std::string> patterns, models;
  for (const auto& r : rows) {
    if (std::find(patterns.begin(), patterns.end(), r.pattern) == patterns.end())
      patterns.push_back(r.pattern);
    if (std::find(models.begin(), models.end(), r.model) == models.end())
      models.push_back(r.model);
  }

  fs::create_directories(a.out);
  const char* metric_names[3] = {"mae", "rmse", "mape"};
  int written = 0;
  for (const auto& pattern : patterns) {
    for (int mi = 0; mi < 3; ++mi) {
      std::vector<double> ratios;
      for (const auto& r : rows)
        if (r.pattern == pattern &&
            std::find(ratios.begin(), ratios.end(), r.ratio) == ratios.end())
          ratios.push_back(r.ratio);
      std::sort(ratios.begin(), ratios.end());

      std::ostringstream out;
      out << "ratio";
      for (const auto& m : models) out << ',' << m;
      out << '\n';
      char buf[48];
      for (const double ratio : ratios) {
        std::snprintf(buf, sizeof(buf), "%.2f", ratio);
        out << buf;
        for (const auto& m : models) {
          bool found = false;
          for (const auto& r : rows)
            if (r.pattern == pattern && r.model == m && r.ratio == ratio) {
              std::snprintf(buf, sizeof(buf), "%.6f", r.metric[mi]);
              out << ',' << buf;
              found = true;
              break;
            }
          if (!found) out << ',';
        }
        out << '\n';
      }
      const auto path =
          (fs::path(a.out) / (pattern + "_" + metric_names[mi] + ".csv")).string();
      atomic_write_file(path, out.str());
      ++written;
    }
  }
  std::printf("wrote %d plot-data files to %s\n", written, a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic-network speed matrix imputation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "plain-text key = value configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  SynthArgs synth;
  auto* cs = app.add_subcommand("synth", "generate the synthetic ring-road fixture");
  cs->add_option("--nodes", synth.nodes, "node count")->check(CLI::Range(2, 100000));
  cs->add_option("--steps", synth.steps, "time steps")->check(CLI::Range(2, 1 << 30));
  cs->add_option("--seed", synth.seed, "random seed")->required();
  cs->add_option("--sigma", synth.sigma, "noise standard deviation (default 1.0)");
  cs->add_option("--common-noise", synth.common_noise,
                 "shared fraction of the noise variance (default 0.5)")
      ->check(CLI::Range(0.0, 1.0));
  cs->add_option("--steps-per-day", synth.steps_per_day, "samples per day (default 288)")
      ->check(CLI::Range(1, 1 << 20));
  cs->add_option("--out", synth.out, "output directory")->required();

  MaskArgs mask;
  auto* cm = app.add_subcommand("mask", "generate a missing-pattern mask");
  cm->add_option("--pattern", mask.pattern, "rm, tcm, scm or bm")->required();
  cm->add_option("--ratio", mask.ratio, "missing ratio")->required();
  cm->add_option("--seed", mask.seed, "random seed")->required();
  cm->add_option("--shape", mask.shape, "mask shape as NxT, e.g. 10x72")->required();
  cm->add_option("--out", mask.out, "output mask file")->required();
  add_graph_flags(cm, mask.graph, false);

  TrainArgs train;
  auto* ct = app.add_subcommand("train", "train an imputation model");
  ct->add_option("--data", train.data, "speed matrix file")->required();
  add_graph_flags(ct, train.graph, true);
  ct->add_option("--avail", train.avail, "availability mask file (0 = never observed)");
  ct->add_option("--pattern", train.pattern, "training missing pattern (default rm)");
  ct->add_option("--window", train.window, "imputation window length (default 72)");
  ct->add_option("--blocks", train.blocks, "spatiotemporal blocks (default 2)");
  ct->add_option("--diffusion-steps", train.diffusion_steps, "diffusion steps (default 2)");
  ct->add_option("--hidden", train.hidden, "recurrent hidden width (default 128)");
  ct->add_option("--out-dim", train.out_dim, "block output width (default 64)");
  ct->add_option("--gse-hidden", train.gse_hidden,
                 "structure-estimation hidden width (default 32)");
  ct->add_option("--lr", train.lr, "learning rate (default 1e-4)");
  ct->add_option("--batch", train.batch, "batch size (default 4)");
  ct->add_option("--iters", train.iters, "training iterations")->required();
  ct->add_option("--seed", train.seed, "random seed")->required();
  ct->add_option("--out", train.out, "output run directory")->required();
  ct->add_flag("--no-gse", train.no_gse, "ablate structure estimation (fixed transitions)");
  ct->add_flag("--no-dgcn", train.no_dgcn, "ablate graph convolution (linear layer)");
  ct->add_flag("--no-blstm", train.no_blstm, "ablate the recurrence (linear layer)");
  ct->add_option("--clip-norm", train.clip_norm, "global gradient clip (0 = off)");
  ct->add_option("--lr-decay", train.lr_decay, "per-iteration learning-rate decay");
  ct->add_option("--val-every", train.val_every, "validation interval (default 100)");
  ct->add_option("--val-ratio", train.val_ratio, "validation mask ratio (default 0.4)");
  ct->add_option("--patience", train.patience, "early-stop patience in validations (0 = off)");
  ct->add_option("--jobs", train.jobs, "parallel batch-element workers (default 1)")
      ->check(CLI::Range(1, 64));
  ct->add_option("--train-fraction", train.train_fraction, "train split (default 0.6)");
  ct->add_option("--val-fraction", train.val_fraction, "validation split (default 0.2)");
  ct->add_option("--test-fraction", train.test_fraction, "test split (default 0.2)");

  ImputeArgs impute;
  auto* ci = app.add_subcommand("impute", "reconstruct missing entries of a speed matrix");
  ci->add_option("--model", impute.model, "run directory or checkpoint file")->required();
  ci->add_option("--data", impute.data, "speed matrix with zeros at missing entries")
      ->required();
  add_graph_flags(ci, impute.graph, true);
  ci->add_option("--out", impute.out, "output speed matrix file")->required();

  EvaluateArgs evaluate;
  auto* ce = app.add_subcommand("evaluate", "run the masked-imputation experiment grid");
  ce->add_option("--model", evaluate.model, "run directory or checkpoint file")->required();
  ce->add_option("--data", evaluate.data, "complete speed matrix file")->required();
  add_graph_flags(ce, evaluate.graph, true);
  ce->add_option("--patterns", evaluate.patterns, "comma-separated pattern list");
  ce->add_option("--ratios", evaluate.ratios, "comma-separated missing ratios");
  ce->add_option("--seed", evaluate.seed, "random seed")->required();
  ce->add_option("--out", evaluate.out, "output directory")->required();
  ce->add_option("--period", evaluate.period, "steps per day for the historical baseline");
  ce->add_option("--jobs", evaluate.jobs, "parallel experiment cells (default 1)")
      ->check(CLI::Range(1, 256));
  ce->add_flag("--dump-pairs", evaluate.dump_pairs,
               "also write (true, predicted) pairs per cell");
  ce->add_option("--train-fraction", evaluate.train_fraction, "train split (default 0.6)");
  ce->add_option("--val-fraction", evaluate.val_fraction, "validation split (default 0.2)");
  ce->add_option("--test-fraction", evaluate.test_fraction, "test split (default 0.2)");
  ce->add_option("--export-node", evaluate.export_node,
                 "also export dynamic transition weights for this node id");
  ce->add_option("--export-times", evaluate.export_times,
                 "window steps for the transition export (default 0)");
  ce->add_option("--export-block", evaluate.export_block,
                 "block to export transitions from (default: last)");

  ReportArgs report;
  auto* cr = app.add_subcommand("report", "emit per-pattern metric-vs-ratio plot data");
  cr->add_option("--report", report.report, "report.csv from evaluate")->required();
  cr->add_option("--out", report.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (cs->parsed()) return cmd_synth(synth);
    if (cm->parsed()) return cmd_mask(mask);
    if (ct->parsed()) return cmd_train(train);
    if (ci->parsed()) return cmd_impute(impute);
    if (ce->parsed()) return cmd_evaluate(evaluate);
    if (cr->parsed()) return cmd_report(report);
  } catch (const ShapeError& e) {
    std::cerr << "error: shape-mismatch: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: numerical: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
