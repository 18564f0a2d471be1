#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "stimpute/errors.hpp"
#include "stimpute/masking.hpp"
#include "stimpute/model.hpp"
#include "stimpute/params.hpp"

namespace stimpute {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  int iterations = 0;
  MissingPattern pattern = MissingPattern::RM;
  std::uint64_t seed = 0;

  // Off by default; no schedule, clipping or early stop unless asked for.
  double clip_norm = 0.0;   // 0 disables
  double lr_decay = 1.0;    // per-iteration multiplier
  int val_every = 100;
  double val_ratio = 0.4;   // masking ratio of the fixed validation mask
  int patience = 0;         // validation rounds without improvement; 0 disables
  int jobs = 1;             // parallel batch-element workers (fixed reduction order)

  void validate() const {
    // A zero rate is allowed (a no-op loop); negative rates are not.
    if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (iterations < 1) throw std::invalid_argument("iteration count must be >= 1");
    if (val_every < 1) throw std::invalid_argument("validation interval must be >= 1");
    if (!(val_ratio > 0.0 && val_ratio < 1.0))
      throw std::invalid_argument("validation ratio must lie in (0, 1)");
    if (jobs < 1) throw std::invalid_argument("worker count must be >= 1");
  }
};

// Sum of squared differences over the whole window (not averaged).
inline double reconstruction_loss(const Eigen::MatrixXd& truth,
                                  const Eigen::MatrixXd& predicted) {
  if (truth.rows() != predicted.rows() || truth.cols() != predicted.cols())
    throw DataError("loss operands have different shapes");
  if (!truth.allFinite() || !predicted.allFinite())
    throw NumericError("loss operands contain non-finite values");
  return (truth - predicted).squaredNorm();
}

struct TrainSample {
  Eigen::MatrixXd masked;  // truth with the mask applied
  Eigen::MatrixXd truth;
  MaskMatrix mask;
  Eigen::MatrixXd weight;  // loss weights: availability of the target entry
};

// One training batch: a shared random window, and per element an
// independent missing ratio drawn uniformly from (0, 1) plus a fresh mask.
inline std::vector<TrainSample> sample_training_batch(
    const Eigen::MatrixXd& history, MissingPattern pattern, int window,
    int batch, Rng& rng, const TrafficGraph* graph = nullptr,
    const Eigen::MatrixXi* availability = nullptr) {
  const auto nodes = static_cast<int>(history.rows());
  const auto period = static_cast<int>(history.cols());
  if (period < window)
    throw DataError("history has " + std::to_string(period) +
                    " steps but the window needs " + std::to_string(window));
  if (availability && (availability->rows() != nodes || availability->cols() != period))
    throw DataError("availability mask shape does not match the history");

  const auto start = static_cast<int>(rng.uniform_int(0, period - window));
  Eigen::MatrixXd truth = history.middleCols(start, window);
  Eigen::MatrixXd weight = Eigen::MatrixXd::Ones(nodes, window);
  if (availability) {
    weight = availability->middleCols(start, window).cast<double>();
    // Unavailable entries carry neither input signal nor loss target.
    truth = truth.cwiseProduct(weight);
  }

  std::vector<TrainSample> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const double ratio = rng.uniform01();
    MaskMatrix mask;
    switch (pattern) {
      case MissingPattern::RM: mask = gen_rm(nodes, window, ratio, rng); break;
      case MissingPattern::TCM: mask = gen_tcm(nodes, window, ratio, rng); break;
      case MissingPattern::SCM:
        if (!graph) throw DataError("spatially correlated sampling needs a graph");
        mask = gen_scm(*graph, nodes, window, ratio, rng);
        break;
      case MissingPattern::BM:
        if (!graph) throw DataError("block sampling needs a graph");
        mask = gen_bm(*graph, nodes, window, ratio, rng);
        break;
    }
    out.push_back(TrainSample{apply_mask(truth, mask), truth, std::move(mask), weight});
  }
  return out;
}

// Adaptive-moment gradient descent with the conventional decay rates.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;

  void step(ParameterSet& params, const std::vector<Eigen::MatrixXd>& grads,
            double lr) {
    if (grads.size() != params.entries.size())
      throw std::invalid_argument("gradient list does not match the parameter set");
    if (m_.empty()) {
      m_.reserve(grads.size());
      v_.reserve(grads.size());
      for (const auto& e : params.entries) {
        m_.push_back(Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols()));
        v_.push_back(Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols()));
      }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * grads[i].array().square()).matrix();
      params.entries[i].value.array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  std::int64_t steps_taken() const { return step_; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t step_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

struct TrainState {
  ParameterSet params;
  AdamOptimizer optimizer;
  int iteration = 0;
  std::vector<double> loss_history;
};

struct TrainResult {
  TrainedModel model;                              // best by validation
  std::vector<double> loss_history;                // per iteration
  std::vector<std::pair<int, double>> val_history; // (iteration, rmse)
  bool diverged = false;
  std::string divergence_note;
};

namespace detail {

// Root-mean-square error at masked validation entries with known truth.
inline double validation_rmse(const TrainedModel& model,
                              const TransitionPair& fixed,
                              const Eigen::MatrixXd& val_truth,
                              const MaskMatrix& val_mask) {
  const Eigen::MatrixXd masked = apply_mask(val_truth, val_mask);
  const Eigen::MatrixXd pred = model::impute_series(model, fixed, masked);
  double sum = 0.0;
  std::int64_t n = 0;
  for (Eigen::Index v = 0; v < val_truth.rows(); ++v)
    for (Eigen::Index t = 0; t < val_truth.cols(); ++t) {
      if (val_mask.values(v, t) != 0) continue;
      if (val_truth(v, t) == 0.0) continue;  // no ground truth recorded
      const double d = val_truth(v, t) - pred(v, t);
      sum += d * d;
      ++n;
    }
  return n > 0 ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
}

// Mean and std over observed (nonzero, available) entries.
inline std::pair<double, double> observed_stats(const Eigen::MatrixXd& data,
                                                const Eigen::MatrixXi* availability) {
  double sum = 0.0, sumsq = 0.0;
  std::int64_t n = 0;
  for (Eigen::Index v = 0; v < data.rows(); ++v)
    for (Eigen::Index t = 0; t < data.cols(); ++t) {
      if (data(v, t) == 0.0) continue;
      if (availability && (*availability)(v, t) == 0) continue;
      sum += data(v, t);
      sumsq += data(v, t) * data(v, t);
      ++n;
    }
  if (n == 0) throw DataError("training data has no observed entries");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  if (sd <= 0.0) throw DataError("observed training entries have zero spread");
  return {mean, sd};
}

}  // namespace detail

// Masked-sample training loop: draw a batch, run the forward pass, take the
// summed squared reconstruction error against the complete window, update
// with Adam. Entries flagged unavailable contribute neither input signal
// nor loss. Divergence aborts with the last finite state.
inline TrainResult train(
    const Eigen::MatrixXd& train_data, const Eigen::MatrixXd& val_data,
    const TrafficGraph& graph, const ModelConfig& mcfg, const TrainConfig& tcfg,
    const Eigen::MatrixXi* availability = nullptr,
    const std::function<void(int, double, double)>& progress = nullptr) {
  mcfg.validate();
  tcfg.validate();
  graph.validate();
  if (!train_data.allFinite()) throw NumericError("training data contains non-finite values");
  if (graph.size() != train_data.rows())
    throw DataError("training data node count does not match the graph");
  if (mcfg.nodes != train_data.rows())
    throw DataError("model node count does not match the training data");

  const TransitionPair fixed = compute_transitions(graph.adjacency);
  const auto [mean, sd] = detail::observed_stats(train_data, availability);

  TrainResult result;
  result.model.config = mcfg;
  result.model.params = init_params(mcfg, tcfg.seed);
  result.model.norm_mean = mean;
  result.model.norm_std = sd;

  const bool validate = val_data.size() > 0 && val_data.cols() >= mcfg.window;
  MaskMatrix val_mask;
  if (validate) {
    MissingSpec spec{tcfg.pattern, tcfg.val_ratio, Rng(tcfg.seed).fork(0x7a1).seed()};
    val_mask = make_mask(spec, static_cast<int>(val_data.rows()),
                         static_cast<int>(val_data.cols()), &graph);
  }

  TrainedModel current = result.model;
  AdamOptimizer optimizer;
  Rng rng(tcfg.seed);
  double best_val = std::numeric_limits<double>::infinity();
  int rounds_since_best = 0;
  double lr = tcfg.learning_rate;

  struct WorkerOut {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> grads;  // empty on non-finite loss
  };

  for (int it = 0; it < tcfg.iterations; ++it) {
    const auto batch = sample_training_batch(train_data, tcfg.pattern,
                                             mcfg.window, tcfg.batch_size, rng,
                                             &graph, availability);

    const auto evaluate_group = [&](const std::vector<int>& members) -> WorkerOut {
      std::vector<Eigen::MatrixXd> inputs;
      inputs.reserve(members.size());
      for (const int b : members) inputs.push_back(batch[static_cast<std::size_t>(b)].masked);

      ad::Tape tape;
      BoundParams bound(tape, current.params);
      const auto fwd = model::build_model(tape, bound, mcfg, fixed, inputs, mean, sd);

      // Stack the targets and loss weights to match the prediction layout.
      const auto rows = fwd.prediction.rows();
      Eigen::MatrixXd target(rows, 1), weight(rows, 1);
      bool all_weighted = true;
      for (int t = 0; t < mcfg.window; ++t)
        for (std::size_t g = 0; g < members.size(); ++g) {
          const auto& s = batch[static_cast<std::size_t>(members[g])];
          for (int v = 0; v < mcfg.nodes; ++v) {
            const auto r = model::stacked_row(mcfg, static_cast<int>(members.size()),
                                              t, static_cast<int>(g), v);
            target(r, 0) = s.truth(v, t);
            weight(r, 0) = s.weight(v, t);
            all_weighted = all_weighted && s.weight(v, t) == 1.0;
          }
        }

      ad::Var diff = ad::sub(fwd.prediction, tape.constant(std::move(target)));
      if (!all_weighted) diff = ad::mul(diff, tape.constant(std::move(weight)));
      const ad::Var loss = ad::sum_squares(diff);
      WorkerOut out;
      out.loss = loss.value()(0, 0);
      if (!std::isfinite(out.loss)) return out;
      tape.backward(loss);
      out.grads = bound.gradients();
      return out;
    };

    // Round-robin grouping keeps the reduction order independent of timing.
    const int workers = std::min(tcfg.jobs, tcfg.batch_size);
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(workers));
    for (int b = 0; b < tcfg.batch_size; ++b)
      groups[static_cast<std::size_t>(b % workers)].push_back(b);

    std::vector<WorkerOut> outs(groups.size());
    if (workers == 1) {
      outs[0] = evaluate_group(groups[0]);
    } else {
      std::vector<std::future<WorkerOut>> futures;
      futures.reserve(groups.size());
      for (const auto& g : groups)
        futures.push_back(std::async(std::launch::async, evaluate_group, g));
      for (std::size_t i = 0; i < futures.size(); ++i) outs[i] = futures[i].get();
    }

    double loss_value = 0.0;
    bool finite = true;
    for (const auto& o : outs) {
      loss_value += o.loss;
      finite = finite && !o.grads.empty() && std::isfinite(o.loss);
    }
    if (!finite || !std::isfinite(loss_value)) {
      result.diverged = true;
      result.divergence_note = "non-finite loss at iteration " + std::to_string(it);
      result.model.params = current.params;  // last finite state
      return result;
    }

    auto grads = std::move(outs[0].grads);
    for (std::size_t i = 1; i < outs.size(); ++i)
      for (std::size_t e = 0; e < grads.size(); ++e) grads[e] += outs[i].grads[e];

    if (tcfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > tcfg.clip_norm) {
        const double s = tcfg.clip_norm / norm;
        for (auto& g : grads) g *= s;
      }
    }

    optimizer.step(current.params, grads, lr);
    lr *= tcfg.lr_decay;
    result.loss_history.push_back(loss_value);

    double val_rmse = std::numeric_limits<double>::quiet_NaN();
    if (validate && ((it + 1) % tcfg.val_every == 0 || it + 1 == tcfg.iterations)) {
      val_rmse = detail::validation_rmse(current, fixed, val_data, val_mask);
      result.val_history.emplace_back(it + 1, val_rmse);
      if (val_rmse < best_val) {
        best_val = val_rmse;
        result.model.params = current.params;
        rounds_since_best = 0;
      } else if (++rounds_since_best >= tcfg.patience && tcfg.patience > 0) {
        if (progress) progress(it + 1, loss_value, val_rmse);
        break;
      }
    }
    if (progress) progress(it + 1, loss_value, val_rmse);
  }

  // Without validation rounds the final parameters are the result.
  if (result.val_history.empty()) result.model.params = current.params;
  return result;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t nonsmooth_skipped = 0;  // probes straddling a relu kink
};

// Compare analytic gradients of the reconstruction loss against central
// finite differences for every parameter scalar of a small model.
//
// The network contains relu nonlinearities, so a finite-difference probe
// can straddle an activation boundary, where the two-sided difference
// estimates no derivative at all. Such probes are detected by step
// halving (a smooth function gives the same central difference at eps and
// eps/2 up to O(eps^2); a kink does not) and reported separately instead
// of polluting the comparison.
inline GradCheckReport gradient_check(const ModelConfig& cfg, double eps = 1e-5,
                                      std::uint64_t seed = 7) {
  cfg.validate();
  Rng rng(seed);

  // Ring-road transitions and a smooth target with masked input.
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < cfg.nodes; ++i) {
    edges.emplace_back(i, (i + 1) % cfg.nodes);
    edges.emplace_back((i + 1) % cfg.nodes, i);
  }
  const auto fixed = compute_transitions(build_binary_adjacency(edges, cfg.nodes));

  Eigen::MatrixXd truth(cfg.nodes, cfg.window);
  for (int v = 0; v < cfg.nodes; ++v)
    for (int t = 0; t < cfg.window; ++t)
      truth(v, t) = 2.0 + std::sin(0.5 * t + v) + 0.2 * rng.uniform01();
  Rng mask_rng(rng.fork(1).seed());
  auto mask = gen_rm(cfg.nodes, cfg.window, 0.3, mask_rng);
  // A node with no observations at all sits exactly on relu boundaries
  // (zero-initialized biases pass the all-zero input straight through),
  // where finite differences are meaningless. Keep one observation per
  // node so the probe point is generic.
  for (int v = 0; v < cfg.nodes; ++v)
    if (mask.values.row(v).sum() == 0) mask.values(v, v % cfg.window) = 1;
  const Eigen::MatrixXd masked = apply_mask(truth, mask);
  const double mean = truth.mean();
  const double sd = 1.0;

  ParameterSet params = init_params(cfg, rng.fork(2).seed());

  const auto loss_at = [&](const ParameterSet& p) -> double {
    ad::Tape tape;
    BoundParams bound(tape, p);
    const auto fwd = model::build_model(tape, bound, cfg, fixed, {masked}, mean, sd);
    Eigen::MatrixXd target(fwd.prediction.rows(), 1);
    for (int t = 0; t < cfg.window; ++t)
      for (int v = 0; v < cfg.nodes; ++v)
        target(model::stacked_row(cfg, 1, t, 0, v), 0) = truth(v, t);
    return ad::sum_squares(ad::sub(fwd.prediction, tape.constant(std::move(target))))
        .value()(0, 0);
  };

  std::vector<Eigen::MatrixXd> analytic;
  {
    ad::Tape tape;
    BoundParams bound(tape, params);
    const auto fwd = model::build_model(tape, bound, cfg, fixed, {masked}, mean, sd);
    Eigen::MatrixXd target(fwd.prediction.rows(), 1);
    for (int t = 0; t < cfg.window; ++t)
      for (int v = 0; v < cfg.nodes; ++v)
        target(model::stacked_row(cfg, 1, t, 0, v), 0) = truth(v, t);
    const ad::Var loss =
        ad::sum_squares(ad::sub(fwd.prediction, tape.constant(std::move(target))));
    tape.backward(loss);
    analytic = bound.gradients();
  }

  GradCheckReport report;
  double total = 0.0;
  for (std::size_t e = 0; e < params.entries.size(); ++e) {
    auto& value = params.entries[e].value;
    for (Eigen::Index i = 0; i < value.rows(); ++i)
      for (Eigen::Index j = 0; j < value.cols(); ++j) {
        const double keep = value(i, j);
        const auto probe = [&](double offset) {
          value(i, j) = keep + offset;
          const double loss = loss_at(params);
          value(i, j) = keep;
          return loss;
        };
        const double fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
        const double fd_half = (probe(eps / 2) - probe(-eps / 2)) / eps;
        if (std::abs(fd - fd_half) >
            std::max(1e-6, 1e-3 * (std::abs(fd) + std::abs(fd_half)))) {
          ++report.nonsmooth_skipped;
          continue;
        }
        const double a = analytic[e](i, j);
        // Symmetric relative difference with a floor for near-zero pairs.
        const double rel =
            std::abs(fd - a) / std::max(1e-6, std::abs(fd) + std::abs(a));
        report.max_rel_error = std::max(report.max_rel_error, rel);
        total += rel;
        ++report.checked;
      }
  }
  report.mean_rel_error =
      report.checked ? total / static_cast<double>(report.checked) : 0.0;
  return report;
}

}  // namespace stimpute
