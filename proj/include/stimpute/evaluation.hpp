#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <future>
#include <sstream>
#include <string>
#include <vector>

#include "stimpute/errors.hpp"
#include "stimpute/masking.hpp"
#include "stimpute/model.hpp"

namespace stimpute {

struct SplitSpec {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;

  void validate() const {
    if (train_fraction <= 0.0 || val_fraction <= 0.0 || test_fraction <= 0.0)
      throw std::invalid_argument("split fractions must be positive");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
      throw std::invalid_argument("split fractions must sum to one");
  }
};

struct Split {
  Eigen::MatrixXd train, val, test;
  int val_begin = 0;
  int test_begin = 0;
};

// Contiguous time slices at floor(f1*P) and floor((f1+f2)*P).
inline Split split(const Eigen::MatrixXd& x, const SplitSpec& spec = {}) {
  spec.validate();
  const auto period = static_cast<int>(x.cols());
  if (period < 3) throw DataError("need at least 3 time steps to split");
  const int b1 = static_cast<int>(std::floor(spec.train_fraction * period));
  const int b2 = static_cast<int>(
      std::floor((spec.train_fraction + spec.val_fraction) * period));
  if (b1 < 1 || b2 <= b1 || b2 >= period)
    throw DataError("split produces an empty slice for " + std::to_string(period) +
                    " steps");
  Split out;
  out.train = x.leftCols(b1);
  out.val = x.middleCols(b1, b2 - b1);
  out.test = x.rightCols(period - b2);
  out.val_begin = b1;
  out.test_begin = b2;
  return out;
}

// Tile the horizon with model windows and keep observed entries verbatim;
// model predictions fill only the missing cells.
inline Eigen::MatrixXd sliding_impute(const TrainedModel& m,
                                      const TransitionPair& fixed,
                                      const Eigen::MatrixXd& masked, int window) {
  if (window != m.config.window)
    throw DataError("requested window does not match the trained model");
  const Eigen::MatrixXd raw = model::impute_series(m, fixed, masked);
  Eigen::MatrixXd out = masked;
  for (Eigen::Index v = 0; v < out.rows(); ++v)
    for (Eigen::Index t = 0; t < out.cols(); ++t)
      if (out(v, t) == 0.0) out(v, t) = raw(v, t);
  return out;
}

struct MetricsCell {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
  std::int64_t n = 0;              // evaluated missing entries
  std::int64_t excluded_mape = 0;  // |truth| < 1, skipped in MAPE only
};

// Error statistics over missing entries only (mask = 0). Entries whose
// ground truth is zero are unknown by the missing-data convention and are
// skipped; near-zero truths (|x| < 1) stay in MAE/RMSE but leave MAPE.
inline MetricsCell compute_metrics(const Eigen::MatrixXd& truth,
                                   const Eigen::MatrixXd& predicted,
                                   const MaskMatrix& mask) {
  if (truth.rows() != predicted.rows() || truth.cols() != predicted.cols() ||
      truth.rows() != mask.values.rows() || truth.cols() != mask.values.cols())
    throw DataError("metric operands have mismatched shapes");

  MetricsCell cell;
  double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0;
  std::int64_t mape_n = 0;
  for (Eigen::Index v = 0; v < truth.rows(); ++v)
    for (Eigen::Index t = 0; t < truth.cols(); ++t) {
      if (mask.values(v, t) != 0) continue;
      const double x = truth(v, t);
      if (x == 0.0) continue;  // never observed; no ground truth
      const double err = x - predicted(v, t);
      abs_sum += std::abs(err);
      sq_sum += err * err;
      ++cell.n;
      if (std::abs(x) < 1.0) {
        ++cell.excluded_mape;
      } else {
        ape_sum += std::abs(err / x);
        ++mape_n;
      }
    }
  if (cell.n == 0) throw DataError("no missing entries with ground truth to evaluate");
  cell.mae = abs_sum / static_cast<double>(cell.n);
  cell.rmse = std::sqrt(sq_sum / static_cast<double>(cell.n));
  cell.mape = mape_n > 0 ? ape_sum / static_cast<double>(mape_n) : 0.0;
  return cell;
}

// Fill every missing entry with its node's observed mean.
inline Eigen::MatrixXd baseline_mean_fill(const Eigen::MatrixXd& masked,
                                          const MaskMatrix& mask) {
  if (masked.rows() != mask.values.rows() || masked.cols() != mask.values.cols())
    throw DataError("mask shape does not match the data");
  Eigen::MatrixXd out = masked;
  for (Eigen::Index v = 0; v < masked.rows(); ++v) {
    double sum = 0.0;
    std::int64_t n = 0;
    for (Eigen::Index t = 0; t < masked.cols(); ++t)
      if (mask.values(v, t) != 0) {
        sum += masked(v, t);
        ++n;
      }
    if (n == 0)
      throw DataError("node " + std::to_string(v) + " has no observed entries to average");
    const double mean = sum / static_cast<double>(n);
    for (Eigen::Index t = 0; t < masked.cols(); ++t)
      if (mask.values(v, t) == 0) out(v, t) = mean;
  }
  return out;
}

// Fill missing entries with the node's observed mean at the same time of
// day, falling back to the node mean when that slot was never observed.
inline Eigen::MatrixXd baseline_historical_average(const Eigen::MatrixXd& masked,
                                                   const MaskMatrix& mask,
                                                   int period) {
  if (period < 1) throw std::invalid_argument("period must be >= 1");
  if (masked.cols() < period)
    throw DataError("series is shorter than one period");
  if (masked.rows() != mask.values.rows() || masked.cols() != mask.values.cols())
    throw DataError("mask shape does not match the data");

  Eigen::MatrixXd out = masked;
  for (Eigen::Index v = 0; v < masked.rows(); ++v) {
    double node_sum = 0.0;
    std::int64_t node_n = 0;
    std::vector<double> slot_sum(static_cast<std::size_t>(period), 0.0);
    std::vector<std::int64_t> slot_n(static_cast<std::size_t>(period), 0);
    for (Eigen::Index t = 0; t < masked.cols(); ++t) {
      if (mask.values(v, t) == 0) continue;
      const auto slot = static_cast<std::size_t>(t % period);
      slot_sum[slot] += masked(v, t);
      ++slot_n[slot];
      node_sum += masked(v, t);
      ++node_n;
    }
    if (node_n == 0)
      throw DataError("node " + std::to_string(v) + " has no observed entries to average");
    const double node_mean = node_sum / static_cast<double>(node_n);
    for (Eigen::Index t = 0; t < masked.cols(); ++t) {
      if (mask.values(v, t) != 0) continue;
      const auto slot = static_cast<std::size_t>(t % period);
      out(v, t) = slot_n[slot] > 0
                      ? slot_sum[slot] / static_cast<double>(slot_n[slot])
                      : node_mean;
    }
  }
  return out;
}

struct ExperimentCell {
  MissingPattern pattern = MissingPattern::RM;
  double ratio = 0.0;
  std::string model_name;
  MetricsCell metrics;
};

// One row per (pattern, ratio, model): the trained model against the two
// reference baselines, all on identical masks. Cells are independent and
// the per-cell seeds derive from the base seed alone, so the grid is
// reproducible regardless of the worker count.
inline std::vector<ExperimentCell> run_experiment(
    const TrainedModel& m, const TrafficGraph& graph,
    const Eigen::MatrixXd& test_truth,
    const std::vector<MissingPattern>& patterns,
    const std::vector<double>& ratios, std::uint64_t seed, int period,
    int jobs = 1) {
  graph.validate();
  if (graph.size() != test_truth.rows())
    throw DataError("graph does not match the test data node count");
  for (const double r : ratios)
    if (!(r > 0.0 && r < 1.0))
      throw std::invalid_argument("experiment ratios must lie in (0, 1)");

  const TransitionPair fixed = compute_transitions(graph.adjacency);
  const auto nodes = static_cast<int>(test_truth.rows());
  const auto horizon = static_cast<int>(test_truth.cols());

  struct Task {
    MissingPattern pattern;
    double ratio;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t pi = 0; pi < patterns.size(); ++pi)
    for (std::size_t ri = 0; ri < ratios.size(); ++ri)
      tasks.push_back(Task{patterns[pi], ratios[ri],
                           Rng(seed).fork(pi * 97 + ri).seed()});

  const auto run_cell = [&](const Task& task) {
    std::vector<ExperimentCell> cells;
    const MaskMatrix mask =
        make_mask({task.pattern, task.ratio, task.seed}, nodes, horizon, &graph);
    const Eigen::MatrixXd masked = apply_mask(test_truth, mask);
    const auto record = [&](const std::string& name, const Eigen::MatrixXd& pred) {
      cells.push_back(ExperimentCell{task.pattern, task.ratio, name,
                                     compute_metrics(test_truth, pred, mask)});
    };
    record("stimpute", sliding_impute(m, fixed, masked, m.config.window));
    record("mean_fill", baseline_mean_fill(masked, mask));
    record("historical_average",
           baseline_historical_average(masked, mask, period));
    return cells;
  };

  std::vector<ExperimentCell> grid;
  if (jobs <= 1) {
    for (const auto& task : tasks)
      for (auto& cell : run_cell(task)) grid.push_back(std::move(cell));
  } else {
    // Groups of `jobs` cells run concurrently; results are collected in
    // submission order so the grid layout never depends on timing.
    for (std::size_t base = 0; base < tasks.size();
         base += static_cast<std::size_t>(jobs)) {
      std::vector<std::future<std::vector<ExperimentCell>>> group;
      for (std::size_t i = base;
           i < std::min(tasks.size(), base + static_cast<std::size_t>(jobs)); ++i)
        group.push_back(std::async(std::launch::async, run_cell, tasks[i]));
      for (auto& f : group)
        for (auto& cell : f.get()) grid.push_back(std::move(cell));
    }
  }
  return grid;
}

inline std::string format_report(const std::vector<ExperimentCell>& grid) {
  std::ostringstream out;
  out << "pattern,ratio,model,mae,rmse,mape,n,excluded_mape\n";
  char buf[160];
  for (const auto& c : grid) {
    std::snprintf(buf, sizeof(buf), "%s,%.2f,%s,%.6f,%.6f,%.6f,%lld,%lld\n",
                  to_string(c.pattern).c_str(), c.ratio, c.model_name.c_str(),
                  c.metrics.mae, c.metrics.rmse, c.metrics.mape,
                  static_cast<long long>(c.metrics.n),
                  static_cast<long long>(c.metrics.excluded_mape));
    out << buf;
  }
  return out.str();
}

struct TransitionExport {
  std::vector<int> times;
  std::vector<Eigen::VectorXd> forward;   // one row of A_{f,t} per time
  std::vector<Eigen::VectorXd> backward;
};

// Rows of the learned transition weights for one node at chosen steps,
// taken from the given block of the model and softmax-normalized for
// plotting; every vector sums to one.
inline TransitionExport export_transition_weights(
    const TrainedModel& m, const TrafficGraph& graph,
    const Eigen::MatrixXd& window, const std::string& node_id,
    const std::vector<int>& times, int block = -1) {
  int node = -1;
  for (int i = 0; i < graph.size(); ++i)
    if (graph.node_ids[static_cast<std::size_t>(i)] == node_id) node = i;
  if (node < 0) throw DataError("unknown node '" + node_id + "'");
  if (block < 0) block = m.config.blocks - 1;

  const TransitionPair fixed = compute_transitions(graph.adjacency);
  const auto dyn = model::eval_dynamic_transitions(m, fixed, window, block);
  const auto softmax_row = [](const Eigen::VectorXd& row) {
    Eigen::VectorXd e = (row.array() - row.maxCoeff()).exp();
    return Eigen::VectorXd(e / e.sum());
  };
  TransitionExport out;
  for (const int t : times) {
    if (t < 0 || t >= m.config.window)
      throw std::invalid_argument("requested time step is outside the window");
    out.times.push_back(t);
    out.forward.push_back(
        softmax_row(dyn.fused_forward[static_cast<std::size_t>(t)].row(node)));
    out.backward.push_back(
        softmax_row(dyn.fused_backward[static_cast<std::size_t>(t)].row(node)));
  }
  return out;
}

inline std::string format_transition_export(const TransitionExport& e,
                                            const std::vector<std::string>& node_ids) {
  std::ostringstream out;
  out << "time,direction";
  for (const auto& id : node_ids) out << ',' << id;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < e.times.size(); ++i) {
    for (int dir = 0; dir < 2; ++dir) {
      out << e.times[i] << ',' << (dir == 0 ? "forward" : "backward");
      const auto& vec = dir == 0 ? e.forward[i] : e.backward[i];
      for (Eigen::Index j = 0; j < vec.size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.9f", vec(j));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace stimpute
