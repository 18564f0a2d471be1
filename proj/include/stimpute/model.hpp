#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "stimpute/autodiff.hpp"
#include "stimpute/errors.hpp"
#include "stimpute/graph.hpp"
#include "stimpute/params.hpp"

namespace stimpute::model {

using ad::Tape;
using ad::Var;

// Structure-estimation internals for one (time step, batch sample) pair.
// af/ab are the row-stochastic dynamic transitions fed to the convolution;
// the rest are pre-normalization stages kept for inspection and export.
struct GseStep {
  Var af, ab;
  Var cand_f, cand_b;
  Var gate_f, gate_b;
  Var fused_f, fused_b;
};

struct BlockTrace {
  std::vector<std::vector<GseStep>> gse;  // [window][batch]; empty when inactive
};

struct Forward {
  std::vector<Var> sequence;  // last block output per step, (batch*nodes) x d_o
  Var prediction;             // (window*batch*nodes) x 1, raw data units
  std::vector<BlockTrace> blocks;
};

// Row index of (step t, sample b, node v) in the stacked prediction.
inline Eigen::Index stacked_row(const ModelConfig& cfg, int batch, int t, int b, int v) {
  return static_cast<Eigen::Index>(t) * batch * cfg.nodes +
         static_cast<Eigen::Index>(b) * cfg.nodes + v;
}

// Bidirectional recurrence over the window, one direction at a time, all
// rows (batch * nodes) advanced in lockstep. Gate layout in the fused
// preactivation is [input, forget, cell, output].
inline std::vector<Var> blstm_layer(Tape& tape, BoundParams& params,
                                    const std::string& prefix,
                                    const std::vector<Var>& seq, int d_h,
                                    int d_o) {
  const int steps = static_cast<int>(seq.size());
  const Eigen::Index rows = seq.front().rows();

  const auto run = [&](const std::string& dir, bool reverse) {
    const Var wx = params(prefix + dir + ".Wx");
    const Var wh = params(prefix + dir + ".Wh");
    const Var b = params(prefix + dir + ".b");

    // Input-side products for every step in one batched multiply.
    const Var all_x = ad::vcat(seq);
    const Var all_zx = ad::matmul(all_x, wx);

    Var h = tape.constant(Eigen::MatrixXd::Zero(rows, d_h));
    Var c = tape.constant(Eigen::MatrixXd::Zero(rows, d_h));
    std::vector<Var> states(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
      const int t = reverse ? steps - 1 - i : i;
      const Var zx = ad::slice_rows(all_zx, static_cast<Eigen::Index>(t) * rows, rows);
      const Var pre = ad::add_row_vector(ad::add(zx, ad::matmul(h, wh)), b);
      const Var in_gate = ad::sigmoid(ad::slice_cols(pre, 0, d_h));
      const Var forget = ad::sigmoid(ad::slice_cols(pre, d_h, d_h));
      const Var cell_in = ad::tanh(ad::slice_cols(pre, 2 * d_h, d_h));
      const Var out_gate = ad::sigmoid(ad::slice_cols(pre, 3 * d_h, d_h));
      c = ad::add(ad::mul(forget, c), ad::mul(in_gate, cell_in));
      h = ad::mul(out_gate, ad::tanh(c));
      states[static_cast<std::size_t>(t)] = h;
    }
    return states;
  };

  const auto fwd = run("fw", false);
  const auto bwd = run("bw", true);

  const Var wo = params(prefix + "out.W");
  const Var bo = params(prefix + "out.b");
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t)
    out.push_back(ad::add_row_vector(
        ad::matmul(ad::hcat(fwd[static_cast<std::size_t>(t)],
                            bwd[static_cast<std::size_t>(t)]),
                   wo),
        bo));
  (void)d_o;
  return out;
}

// Temporal stage of one block: the recurrence, or its linear stand-in when
// ablated.
inline std::vector<Var> temporal_layer(Tape& tape, BoundParams& params,
                                       const ModelConfig& cfg, int block,
                                       const std::vector<Var>& seq) {
  const std::string b = "b" + std::to_string(block) + ".";
  if (cfg.use_blstm)
    return blstm_layer(tape, params, b + "blstm.", seq, cfg.hidden, cfg.out_dim);
  const Var w = params(b + "temporal.W");
  const Var bias = params(b + "temporal.b");
  std::vector<Var> out;
  out.reserve(seq.size());
  for (const Var& m : seq)
    out.push_back(ad::add_row_vector(ad::matmul(m, w), bias));
  return out;
}

// Dynamic transitions per step and sample: a two-layer feed-forward map
// from node features to an NxN candidate, a scalar-parameter sigmoid gate
// fusing it with the fixed transitions, then a nonnegative row
// normalization that keeps the fixed structure intact when the gate
// saturates. Softmax is reserved for weight export.
inline std::vector<std::vector<GseStep>> gse_layer(
    Tape& tape, BoundParams& params, const std::string& prefix,
    const std::vector<Var>& seq, Var fixed_f, Var fixed_b, int batch,
    int nodes) {
  const Var ones = tape.constant(Eigen::MatrixXd::Ones(nodes, nodes));

  struct DirParams {
    Var w1, b1, w2, b2, g1, g2, gb;
  };
  const auto bind = [&](const std::string& dir) {
    return DirParams{params(prefix + dir + ".W1"), params(prefix + dir + ".b1"),
                     params(prefix + dir + ".W2"), params(prefix + dir + ".b2"),
                     params(prefix + dir + ".g1"), params(prefix + dir + ".g2"),
                     params(prefix + dir + ".gb")};
  };
  const DirParams fp = bind("f");
  const DirParams bp = bind("b");

  std::vector<std::vector<GseStep>> all(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    all[t].resize(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const Var feats = batch == 1
                            ? seq[t]
                            : ad::slice_rows(seq[t], static_cast<Eigen::Index>(b) * nodes, nodes);
      const auto estimate = [&](const DirParams& dp, Var fixed, Var& cand,
                                Var& gate, Var& fused, Var& normalized) {
        const Var h = ad::relu(ad::add_row_vector(ad::matmul(feats, dp.w1), dp.b1));
        cand = ad::add_row_vector(ad::matmul(h, dp.w2), dp.b2);
        if (!cand.value().allFinite())
          throw NumericError("structure estimation produced a non-finite candidate at step " +
                             std::to_string(t) + ", sample " + std::to_string(b));
        gate = ad::sigmoid(ad::add(
            ad::add(ad::scalar_mul(dp.g1, fixed), ad::scalar_mul(dp.g2, cand)),
            ad::broadcast_scalar(dp.gb, nodes, nodes)));
        fused = ad::add(ad::mul(gate, fixed),
                        ad::mul(ad::sub(ones, gate), cand));
        normalized = ad::relu_l1_rows(fused);
      };
      GseStep& step = all[t][static_cast<std::size_t>(b)];
      estimate(fp, fixed_f, step.cand_f, step.gate_f, step.fused_f, step.af);
      estimate(bp, fixed_b, step.cand_b, step.gate_b, step.fused_b, step.ab);
    }
  }
  return all;
}

// Diffusion convolution over per-(step, sample) transition matrices:
// sum_{k=1..K} F_k(A_f) M theta_f^k + F_k(A_b) M theta_b^k with the
// recursive basis F_1 = A, F_k = 2 A F_{k-1} - F_{k-2}.
inline std::vector<Var> dgcn_layer(
    Tape& tape, BoundParams& params, const std::string& prefix,
    const std::vector<Var>& seq,
    const std::function<std::pair<Var, Var>(int t, int b)>& transitions,
    int diffusion_steps, int batch, int nodes) {
  const Var identity =
      tape.constant(Eigen::MatrixXd::Identity(nodes, nodes));

  std::vector<Var> thetas_f, thetas_b;
  for (int k = 1; k <= diffusion_steps; ++k) {
    thetas_f.push_back(params(prefix + "f.theta" + std::to_string(k)));
    thetas_b.push_back(params(prefix + "b.theta" + std::to_string(k)));
  }

  std::vector<Var> out;
  out.reserve(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    std::vector<Var> feats(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b)
      feats[static_cast<std::size_t>(b)] =
          batch == 1 ? seq[t]
                     : ad::slice_rows(seq[t], static_cast<Eigen::Index>(b) * nodes, nodes);

    Var acc;
    for (int dir = 0; dir < 2; ++dir) {
      std::vector<Var> prev(static_cast<std::size_t>(batch));
      std::vector<Var> cur(static_cast<std::size_t>(batch));
      std::vector<Var> a(static_cast<std::size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        const auto [af, ab] = transitions(static_cast<int>(t), b);
        a[static_cast<std::size_t>(b)] = dir == 0 ? af : ab;
        prev[static_cast<std::size_t>(b)] = identity;
        cur[static_cast<std::size_t>(b)] = a[static_cast<std::size_t>(b)];
      }
      for (int k = 1; k <= diffusion_steps; ++k) {
        if (k > 1) {
          for (int b = 0; b < batch; ++b) {
            auto& pb = prev[static_cast<std::size_t>(b)];
            auto& cb = cur[static_cast<std::size_t>(b)];
            const Var next = ad::sub(
                ad::scale(ad::matmul(a[static_cast<std::size_t>(b)], cb), 2.0), pb);
            pb = cb;
            cb = next;
          }
        }
        std::vector<Var> terms;
        terms.reserve(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b)
          terms.push_back(ad::matmul(cur[static_cast<std::size_t>(b)],
                                     feats[static_cast<std::size_t>(b)]));
        const Var stacked = batch == 1 ? terms[0] : ad::vcat(terms);
        const Var contrib = ad::matmul(
            stacked, dir == 0 ? thetas_f[static_cast<std::size_t>(k - 1)]
                              : thetas_b[static_cast<std::size_t>(k - 1)]);
        acc = acc.valid() ? ad::add(acc, contrib) : contrib;
      }
    }
    out.push_back(acc);
  }
  return out;
}

// One spatiotemporal block: temporal stage, spatial stage on its output,
// residual sum, then layer normalization over the feature axis.
inline std::vector<Var> st_block(Tape& tape, BoundParams& params,
                                 const ModelConfig& cfg, int block,
                                 const std::vector<Var>& in_seq, Var fixed_f,
                                 Var fixed_b, int batch, BlockTrace& trace) {
  const std::string b = "b" + std::to_string(block) + ".";
  const auto temporal = temporal_layer(tape, params, cfg, block, in_seq);

  std::vector<Var> spatial;
  if (cfg.use_dgcn) {
    std::function<std::pair<Var, Var>(int, int)> transitions;
    if (cfg.gse_active()) {
      trace.gse = gse_layer(tape, params, b + "gse.", temporal, fixed_f,
                            fixed_b, batch, cfg.nodes);
      const auto& steps = trace.gse;
      transitions = [&steps](int t, int bb) {
        const GseStep& s = steps[static_cast<std::size_t>(t)][static_cast<std::size_t>(bb)];
        return std::make_pair(s.af, s.ab);
      };
    } else {
      transitions = [fixed_f, fixed_b](int, int) {
        return std::make_pair(fixed_f, fixed_b);
      };
    }
    spatial = dgcn_layer(tape, params, b + "dgcn.", temporal, transitions,
                         cfg.diffusion_steps, batch, cfg.nodes);
  } else {
    const Var w = params(b + "spatial.W");
    const Var bias = params(b + "spatial.b");
    spatial.reserve(temporal.size());
    for (const Var& m : temporal)
      spatial.push_back(ad::add_row_vector(ad::matmul(m, w), bias));
  }

  const Var gamma = params(b + "ln.gamma");
  const Var beta = params(b + "ln.beta");
  std::vector<Var> out;
  out.reserve(temporal.size());
  for (std::size_t t = 0; t < temporal.size(); ++t)
    out.push_back(ad::layer_norm_rows(ad::add(spatial[t], temporal[t]), gamma, beta));
  return out;
}

// Two-layer feed-forward readout applied per step and node; all steps are
// stacked into one (window*batch*nodes) x 1 column.
inline Var output_head(Tape& tape, BoundParams& params,
                       const std::vector<Var>& seq) {
  (void)tape;
  const Var stacked = seq.size() == 1 ? seq[0] : ad::vcat(seq);
  const Var h = ad::relu(
      ad::add_row_vector(ad::matmul(stacked, params("head.W1")), params("head.b1")));
  return ad::add_row_vector(ad::matmul(h, params("head.W2")), params("head.b2"));
}

// Normalize raw windows (zeros stay zero, everything else is z-scored) and
// lay them out as per-step constants with samples stacked along rows.
inline std::vector<Var> prepare_input(Tape& tape, const ModelConfig& cfg,
                                      const std::vector<Eigen::MatrixXd>& windows,
                                      double mean, double stddev) {
  if (windows.empty()) throw std::invalid_argument("no input windows");
  if (stddev <= 0.0) throw std::invalid_argument("normalization std must be positive");
  const int batch = static_cast<int>(windows.size());
  for (const auto& w : windows) {
    if (w.rows() != cfg.nodes || w.cols() != cfg.window)
      throw ShapeError("input window is " + std::to_string(w.rows()) + "x" +
                      std::to_string(w.cols()) + " but the model expects " +
                      std::to_string(cfg.nodes) + "x" + std::to_string(cfg.window));
    if (!w.allFinite()) throw NumericError("input window contains non-finite values");
  }

  std::vector<Var> seq;
  seq.reserve(static_cast<std::size_t>(cfg.window));
  for (int t = 0; t < cfg.window; ++t) {
    Eigen::MatrixXd slab(static_cast<Eigen::Index>(batch) * cfg.nodes, 1);
    for (int b = 0; b < batch; ++b)
      for (int v = 0; v < cfg.nodes; ++v) {
        const double x = windows[static_cast<std::size_t>(b)](v, t);
        slab(static_cast<Eigen::Index>(b) * cfg.nodes + v, 0) =
            x == 0.0 ? 0.0 : (x - mean) / stddev;
      }
    seq.push_back(tape.constant(std::move(slab)));
  }
  return seq;
}

// Full forward pass: S blocks, readout, de-normalization back to raw units.
inline Forward build_model(Tape& tape, BoundParams& params,
                           const ModelConfig& cfg, const TransitionPair& fixed,
                           const std::vector<Eigen::MatrixXd>& windows,
                           double mean, double stddev) {
  cfg.validate();
  if (fixed.forward.rows() != cfg.nodes || fixed.backward.rows() != cfg.nodes)
    throw ShapeError("transition matrices do not match the model node count");
  const int batch = static_cast<int>(windows.size());

  const Var fixed_f = tape.constant(fixed.forward);
  const Var fixed_b = tape.constant(fixed.backward);

  Forward result;
  result.blocks.resize(static_cast<std::size_t>(cfg.blocks));
  std::vector<Var> seq = prepare_input(tape, cfg, windows, mean, stddev);
  for (int s = 0; s < cfg.blocks; ++s)
    seq = st_block(tape, params, cfg, s, seq, fixed_f, fixed_b, batch,
                   result.blocks[static_cast<std::size_t>(s)]);
  result.sequence = seq;

  const Var head = output_head(tape, params, seq);
  result.prediction = ad::add_scalar(ad::scale(head, stddev), mean);
  return result;
}

// Convenience single-window inference; returns the raw model output as an
// N x T matrix (no pass-through applied).
inline Eigen::MatrixXd impute_window(const TrainedModel& m,
                                     const TransitionPair& fixed,
                                     const Eigen::MatrixXd& window) {
  Tape tape;
  BoundParams params(tape, m.params);
  const auto fwd =
      build_model(tape, params, m.config, fixed, {window}, m.norm_mean, m.norm_std);
  const auto& col = fwd.prediction.value();
  Eigen::MatrixXd out(m.config.nodes, m.config.window);
  for (int t = 0; t < m.config.window; ++t)
    for (int v = 0; v < m.config.nodes; ++v)
      out(v, t) = col(stacked_row(m.config, 1, t, 0, v), 0);
  if (!out.allFinite())
    throw NumericError("model produced non-finite imputation values");
  return out;
}

// Impute an N x P series by tiling it with consecutive model windows.
// Windows do not overlap except possibly the last: when the length is not
// a multiple of the window, a final window ending at P covers the tail and
// only its previously-unseen columns are written. Raw model outputs
// everywhere (no pass-through).
inline Eigen::MatrixXd impute_series(const TrainedModel& m,
                                     const TransitionPair& fixed,
                                     const Eigen::MatrixXd& series) {
  const int window = m.config.window;
  const auto horizon = static_cast<int>(series.cols());
  if (series.rows() != m.config.nodes)
    throw ShapeError("series node count does not match the model");
  if (horizon < window)
    throw DataError("series is shorter than one imputation window");

  Eigen::MatrixXd out(series.rows(), horizon);
  int covered = 0;
  while (covered < horizon) {
    const bool ragged = covered + window > horizon;
    const int begin = ragged ? horizon - window : covered;
    const Eigen::MatrixXd pred =
        impute_window(m, fixed, series.middleCols(begin, window));
    const int fresh_from = covered - begin;
    out.middleCols(covered, window - fresh_from) =
        pred.middleCols(fresh_from, window - fresh_from);
    covered = begin + window;
  }
  return out;
}

// Per-step dynamic transitions for one window, taken from a chosen block.
// Without an active structure-estimation stage the fixed transitions are
// returned for every step.
struct DynamicTransitions {
  std::vector<Eigen::MatrixXd> forward;
  std::vector<Eigen::MatrixXd> backward;
  std::vector<Eigen::MatrixXd> fused_forward;   // pre-normalization weights
  std::vector<Eigen::MatrixXd> fused_backward;
};

inline DynamicTransitions eval_dynamic_transitions(const TrainedModel& m,
                                                   const TransitionPair& fixed,
                                                   const Eigen::MatrixXd& window,
                                                   int block) {
  if (block < 0 || block >= m.config.blocks)
    throw std::invalid_argument("block index out of range");
  Tape tape;
  BoundParams params(tape, m.params);
  const auto fwd =
      build_model(tape, params, m.config, fixed, {window}, m.norm_mean, m.norm_std);
  DynamicTransitions out;
  out.forward.reserve(static_cast<std::size_t>(m.config.window));
  out.backward.reserve(static_cast<std::size_t>(m.config.window));
  const auto& trace = fwd.blocks[static_cast<std::size_t>(block)];
  for (int t = 0; t < m.config.window; ++t) {
    if (!trace.gse.empty()) {
      const auto& step = trace.gse[static_cast<std::size_t>(t)][0];
      out.forward.push_back(step.af.value());
      out.backward.push_back(step.ab.value());
      out.fused_forward.push_back(step.fused_f.value());
      out.fused_backward.push_back(step.fused_b.value());
    } else {
      out.forward.push_back(fixed.forward);
      out.backward.push_back(fixed.backward);
      out.fused_forward.push_back(fixed.forward);
      out.fused_backward.push_back(fixed.backward);
    }
  }
  return out;
}

}  // namespace stimpute::model
