#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <functional>
#include <utility>
#include <vector>

#include "stimpute/errors.hpp"

namespace stimpute::ad {

class Tape;

// Handle to a matrix-valued node on a tape.
class Var {
 public:
  Var() = default;
  const Eigen::MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

// Record of matrix operations supporting one reverse sweep. Values are
// eagerly computed; adjoints are accumulated lazily during backward().
// A tape is single-threaded; build one per worker.
class Tape {
 public:
  Var constant(Eigen::MatrixXd value) { return push(std::move(value), false); }

  // Gradient-tracked input (model parameters, probe points).
  Var leaf(Eigen::MatrixXd value) { return push(std::move(value), true); }

  const Eigen::MatrixXd& value(Var v) const {
    return nodes_[static_cast<std::size_t>(v.index())].value;
  }

  bool tracked(Var v) const {
    return nodes_[static_cast<std::size_t>(v.index())].track;
  }

  // Adjoint of a node after backward(); zero matrix if none reached it.
  Eigen::MatrixXd grad(Var v) const {
    const auto& n = nodes_[static_cast<std::size_t>(v.index())];
    if (n.grad.size() == 0)
      return Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Reverse sweep from a 1x1 scalar node.
  void backward(Var root) {
    auto& r = nodes_[static_cast<std::size_t>(root.index())];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw std::invalid_argument("backward root must be a 1x1 scalar");
    r.grad = Eigen::MatrixXd::Ones(1, 1);
    for (int i = root.index(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() != 0 && n.back) n.back();
    }
  }

  void clear_grads() {
    for (auto& n : nodes_) n.grad.resize(0, 0);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var matmul(Var, Var);
  friend Var scale(Var, double);
  friend Var add_scalar(Var, double);
  friend Var scalar_mul(Var, Var);
  friend Var broadcast_scalar(Var, Eigen::Index, Eigen::Index);
  friend Var add_row_vector(Var, Var);
  friend Var sigmoid(Var);
  friend Var tanh(Var);
  friend Var relu(Var);
  friend Var softmax_rows(Var);
  friend Var relu_l1_rows(Var);
  friend Var layer_norm_rows(Var, Var, Var, double);
  friend Var slice_rows(Var, Eigen::Index, Eigen::Index);
  friend Var slice_cols(Var, Eigen::Index, Eigen::Index);
  friend Var vcat(const std::vector<Var>&);
  friend Var hcat(Var, Var);
  friend Var sum_squares(Var);

  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void()> back;
    bool track = false;
  };

  Var push(Eigen::MatrixXd value, bool track,
           std::function<void()> back = nullptr) {
    nodes_.push_back(Node{std::move(value), {}, std::move(back), track});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Eigen::MatrixXd& value_ref(int i) {
    return nodes_[static_cast<std::size_t>(i)].value;
  }

  const Eigen::MatrixXd& grad_ref(int i) const {
    return nodes_[static_cast<std::size_t>(i)].grad;
  }

  template <typename Expr>
  void accum(int i, const Expr& delta) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.track) return;
    if (n.grad.size() == 0) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad.noalias() += delta;
  }

  template <typename Expr>
  void accum_array(int i, const Expr& delta) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.track) return;
    if (n.grad.size() == 0) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad.array() += delta;
  }

  std::vector<Node> nodes_;
};

inline const Eigen::MatrixXd& Var::value() const { return tape_->value(*this); }

namespace detail {
inline Tape* same_tape(Var a, Var b) {
  assert(a.tape() == b.tape());
  return a.tape();
}
inline void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": operand shapes differ");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  const int ia = a.index(), ib = b.index();
  Var out = t->push(a.value() + b.value(), t->tracked(a) || t->tracked(b));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, ib, io] {
    const auto& g = t->grad_ref(io);
    t->accum(ia, g);
    t->accum(ib, g);
  };
  return out;
}

inline Var sub(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  const int ia = a.index(), ib = b.index();
  Var out = t->push(a.value() - b.value(), t->tracked(a) || t->tracked(b));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, ib, io] {
    const auto& g = t->grad_ref(io);
    t->accum(ia, g);
    t->accum(ib, -g);
  };
  return out;
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  detail::check_same_shape(a, b, "mul");
  const int ia = a.index(), ib = b.index();
  Var out = t->push(a.value().cwiseProduct(b.value()),
                    t->tracked(a) || t->tracked(b));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, ib, io] {
    const auto& g = t->grad_ref(io);
    t->accum_array(ia, g.array() * t->value_ref(ib).array());
    t->accum_array(ib, g.array() * t->value_ref(ia).array());
  };
  return out;
}

inline Var matmul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ");
  const int ia = a.index(), ib = b.index();
  Var out = t->push(a.value() * b.value(), t->tracked(a) || t->tracked(b));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, ib, io] {
    const auto& g = t->grad_ref(io);
    t->accum(ia, g * t->value_ref(ib).transpose());
    t->accum(ib, t->value_ref(ia).transpose() * g);
  };
  return out;
}

inline Var scale(Var a, double c) {
  Tape* t = a.tape();
  const int ia = a.index();
  Var out = t->push(c * a.value(), t->tracked(a));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, io, c] {
    t->accum(ia, c * t->grad_ref(io));
  };
  return out;
}

inline Var add_scalar(Var a, double c) {
  Tape* t = a.tape();
  const int ia = a.index();
  Var out = t->push(a.value().array() + c, t->tracked(a));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, io] {
    t->accum(ia, t->grad_ref(io));
  };
  return out;
}

// Multiply a matrix by a 1x1 node.
inline Var scalar_mul(Var s, Var x) {
  Tape* t = detail::same_tape(s, x);
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("scalar_mul: scalar operand must be 1x1");
  const int is = s.index(), ix = x.index();
  Var out = t->push(s.value()(0, 0) * x.value(), t->tracked(s) || t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, is, ix, io] {
    const auto& g = t->grad_ref(io);
    Eigen::MatrixXd ds(1, 1);
    ds(0, 0) = (g.array() * t->value_ref(ix).array()).sum();
    t->accum(is, ds);
    t->accum(ix, t->value_ref(is)(0, 0) * g);
  };
  return out;
}

// Tile a 1x1 node over a rows-by-cols matrix.
inline Var broadcast_scalar(Var s, Eigen::Index rows, Eigen::Index cols) {
  Tape* t = s.tape();
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("broadcast_scalar: operand must be 1x1");
  const int is = s.index();
  Var out = t->push(Eigen::MatrixXd::Constant(rows, cols, s.value()(0, 0)),
                    t->tracked(s));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, is, io] {
    Eigen::MatrixXd ds(1, 1);
    ds(0, 0) = t->grad_ref(io).sum();
    t->accum(is, ds);
  };
  return out;
}

// Add a 1-by-cols row vector to every row.
inline Var add_row_vector(Var x, Var row) {
  Tape* t = detail::same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols())
    throw std::invalid_argument("add_row_vector: bias must be 1 x cols");
  const int ix = x.index(), ir = row.index();
  Var out = t->push(x.value().rowwise() + row.value().row(0),
                    t->tracked(x) || t->tracked(row));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, ir, io] {
    const auto& g = t->grad_ref(io);
    t->accum(ix, g);
    t->accum(ir, g.colwise().sum());
  };
  return out;
}

inline Var sigmoid(Var x) {
  Tape* t = x.tape();
  const int ix = x.index();
  Var out = t->push(
      (1.0 / (1.0 + (-x.value().array()).exp())).matrix(), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io] {
    const auto& y = t->value_ref(io).array();
    t->accum_array(ix, t->grad_ref(io).array() * y * (1.0 - y));
  };
  return out;
}

inline Var tanh(Var x) {
  Tape* t = x.tape();
  const int ix = x.index();
  Var out = t->push(x.value().array().tanh().matrix(), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io] {
    const auto& y = t->value_ref(io).array();
    t->accum_array(ix, t->grad_ref(io).array() * (1.0 - y * y));
  };
  return out;
}

inline Var relu(Var x) {
  Tape* t = x.tape();
  const int ix = x.index();
  Var out = t->push(x.value().cwiseMax(0.0), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io] {
    const auto& xv = t->value_ref(ix).array();
    t->accum_array(ix, t->grad_ref(io).array() * (xv > 0.0).cast<double>());
  };
  return out;
}

// Row-wise softmax, stabilized against overflow.
inline Var softmax_rows(Var x) {
  Tape* t = x.tape();
  const int ix = x.index();
  Eigen::MatrixXd y = x.value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  Var out = t->push(std::move(y), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io] {
    const auto& y2 = t->value_ref(io);
    const auto& g = t->grad_ref(io);
    const Eigen::VectorXd dot = (g.array() * y2.array()).rowwise().sum();
    t->accum_array(ix, (g.array().colwise() - dot.array()) * y2.array());
  };
  return out;
}

// Clamp negatives to zero and scale each row to sum to one. Rows without
// any positive entry fall back to a unit self-loop, mirroring the
// zero-row rule of the fixed transition matrices (square input only).
inline Var relu_l1_rows(Var x) {
  Tape* t = x.tape();
  if (x.rows() != x.cols())
    throw std::invalid_argument("relu_l1_rows: input must be square");
  const int ix = x.index();
  Eigen::MatrixXd y = x.value().cwiseMax(0.0);
  Eigen::VectorXd sums = y.rowwise().sum();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (sums(i) > 0.0) {
      y.row(i) /= sums(i);
    } else {
      y.row(i).setZero();
      y(i, i) = 1.0;
    }
  }
  Var out = t->push(std::move(y), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io, sums = std::move(sums)] {
    const auto& g = t->grad_ref(io);
    const auto& y2 = t->value_ref(io);
    const auto& xv = t->value_ref(ix);
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      if (sums(i) <= 0.0) continue;  // fallback rows are locally constant
      const double dot = g.row(i).dot(y2.row(i));
      for (Eigen::Index j = 0; j < xv.cols(); ++j)
        if (xv(i, j) > 0.0) dx(i, j) = (g(i, j) - dot) / sums(i);
    }
    t->accum(ix, dx);
  };
  return out;
}

// Layer normalization over the feature (column) axis of each row, with
// learned 1-by-cols scale and shift.
inline Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Tape* t = detail::same_tape(x, gamma);
  assert(beta.tape() == t);
  const auto d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
    throw std::invalid_argument("layer_norm_rows: scale/shift must be 1 x cols");

  const Eigen::VectorXd mean = x.value().rowwise().mean();
  Eigen::MatrixXd centered = x.value().colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps)
          .sqrt()
          .inverse();
  Eigen::MatrixXd normalized = centered.array().colwise() * inv_std.array();
  Eigen::MatrixXd y =
      (normalized.array().rowwise() * gamma.value().row(0).array()).rowwise() +
      beta.value().row(0).array();

  const int ix = x.index(), ig = gamma.index(), ib = beta.index();
  Var out = t->push(std::move(y),
                    t->tracked(x) || t->tracked(gamma) || t->tracked(beta));
  const int io = out.index();
  // Keep the forward intermediates for the reverse pass.
  t->nodes_[static_cast<std::size_t>(io)].back =
      [t, ix, ig, ib, io, normalized = std::move(normalized),
       inv_std = std::move(inv_std), d] {
        const auto& g = t->grad_ref(io);
        const Eigen::ArrayXXd gnorm =
            g.array().rowwise() * t->value_ref(ig).row(0).array();
        // d/dx of (x - mean) * inv_std with both mean and std functions of x.
        const Eigen::ArrayXd sum_g = gnorm.rowwise().sum();
        const Eigen::ArrayXd sum_gx =
            (gnorm * normalized.array()).rowwise().sum();
        const Eigen::ArrayXXd dx =
            ((gnorm * static_cast<double>(d)).colwise() - sum_g -
             (normalized.array().colwise() * sum_gx))
                .colwise() *
            (inv_std.array() / static_cast<double>(d));
        t->accum_array(ix, dx);
        t->accum(ig, (g.array() * normalized.array()).colwise().sum().matrix());
        t->accum(ib, g.colwise().sum());
      };
  return out;
}

inline Var slice_rows(Var x, Eigen::Index begin, Eigen::Index count) {
  Tape* t = x.tape();
  if (begin < 0 || count < 0 || begin + count > x.rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  const int ix = x.index();
  Var out = t->push(x.value().middleRows(begin, count), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io, begin, count] {
    auto& n = t->nodes_[static_cast<std::size_t>(ix)];
    if (!n.track) return;
    if (n.grad.size() == 0)
      n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad.middleRows(begin, count) += t->grad_ref(io);
  };
  return out;
}

inline Var slice_cols(Var x, Eigen::Index begin, Eigen::Index count) {
  Tape* t = x.tape();
  if (begin < 0 || count < 0 || begin + count > x.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  const int ix = x.index();
  Var out = t->push(x.value().middleCols(begin, count), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io, begin, count] {
    auto& n = t->nodes_[static_cast<std::size_t>(ix)];
    if (!n.track) return;
    if (n.grad.size() == 0)
      n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad.middleCols(begin, count) += t->grad_ref(io);
  };
  return out;
}

// Stack vertically; all parts must share a column count.
inline Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vcat: nothing to stack");
  Tape* t = parts.front().tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool track = false;
  for (const Var& p : parts) {
    assert(p.tape() == t);
    if (p.cols() != cols) throw std::invalid_argument("vcat: column counts differ");
    rows += p.rows();
    track = track || t->tracked(p);
  }
  Eigen::MatrixXd value(rows, cols);
  Eigen::Index at = 0;
  std::vector<std::pair<int, Eigen::Index>> layout;  // node index, row offset
  layout.reserve(parts.size());
  for (const Var& p : parts) {
    value.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.index(), at);
    at += p.rows();
  }
  Var out = t->push(std::move(value), track);
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, io, layout = std::move(layout)] {
    const auto& g = t->grad_ref(io);
    for (const auto& [idx, offset] : layout) {
      auto& n = t->nodes_[static_cast<std::size_t>(idx)];
      if (!n.track) continue;
      if (n.grad.size() == 0)
        n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
      n.grad += g.middleRows(offset, n.value.rows());
    }
  };
  return out;
}

inline Var hcat(Var a, Var b) {
  Tape* t = detail::same_tape(a, b);
  if (a.rows() != b.rows()) throw std::invalid_argument("hcat: row counts differ");
  Eigen::MatrixXd value(a.rows(), a.cols() + b.cols());
  value << a.value(), b.value();
  const int ia = a.index(), ib = b.index();
  Var out = t->push(std::move(value), t->tracked(a) || t->tracked(b));
  const int io = out.index();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ia, ib, io, ca, cb] {
    const auto& g = t->grad_ref(io);
    t->accum(ia, g.leftCols(ca));
    t->accum(ib, g.rightCols(cb));
  };
  return out;
}

// Sum of squared entries, as a 1x1 node.
inline Var sum_squares(Var x) {
  Tape* t = x.tape();
  const int ix = x.index();
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = x.value().squaredNorm();
  Var out = t->push(std::move(v), t->tracked(x));
  const int io = out.index();
  t->nodes_[static_cast<std::size_t>(io)].back = [t, ix, io] {
    t->accum(ix, 2.0 * t->grad_ref(io)(0, 0) * t->value_ref(ix));
  };
  return out;
}

}  // namespace stimpute::ad
