#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <functional>

#include "stimpute/autodiff.hpp"
#include "stimpute/rng.hpp"

using namespace stimpute;
using ad::Tape;
using ad::Var;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// Central-difference check of d(scalar)/d(x) for a graph rebuilt per probe.
double max_rel_error(
    const Eigen::MatrixXd& x0,
    const std::function<Var(Tape&, Var)>& build, double eps = 1e-6) {
  Tape tape;
  Var x = tape.leaf(x0);
  Var loss = build(tape, x);
  tape.backward(loss);
  const Eigen::MatrixXd analytic = tape.grad(x);

  const auto eval = [&](int i, int j, double v) {
    Tape probe;
    Eigen::MatrixXd shifted = x0;
    shifted(i, j) = v;
    return build(probe, probe.leaf(shifted)).value()(0, 0);
  };

  double worst = 0.0;
  for (int i = 0; i < x0.rows(); ++i)
    for (int j = 0; j < x0.cols(); ++j) {
      const double fd =
          (eval(i, j, x0(i, j) + eps) - eval(i, j, x0(i, j) - eps)) / (2 * eps);
      const double denom =
          std::max({1e-3, std::abs(fd), std::abs(analytic(i, j))});
      worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
    }
  return worst;
}

}  // namespace

TEST_CASE("arithmetic op gradients match finite differences") {
  Rng rng(101);
  const auto a = random_matrix(3, 4, rng);
  const auto b = random_matrix(3, 4, rng);

  CHECK(max_rel_error(a, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::add(x, t.constant(b)));
        }) < 1e-7);
  CHECK(max_rel_error(a, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::sub(t.constant(b), x));
        }) < 1e-7);
  CHECK(max_rel_error(a, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::mul(x, t.constant(b)));
        }) < 1e-7);
  CHECK(max_rel_error(a, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::scale(x, -1.7));
        }) < 1e-7);
  CHECK(max_rel_error(a, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::add_scalar(x, 0.3));
        }) < 1e-7);
}

TEST_CASE("matmul gradients flow to both operands") {
  Rng rng(102);
  const auto a = random_matrix(3, 5, rng);
  const auto b = random_matrix(5, 2, rng);

  CHECK(max_rel_error(a, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::matmul(x, t.constant(b)));
        }) < 1e-7);
  CHECK(max_rel_error(b, [&](Tape& t, Var x) {
          return ad::sum_squares(ad::matmul(t.constant(a), x));
        }) < 1e-7);
}

TEST_CASE("scalar broadcast op gradients") {
  Rng rng(103);
  const auto x = random_matrix(4, 3, rng);
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = 0.7;

  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          return ad::sum_squares(ad::scalar_mul(t.leaf(s), v));
        }) < 1e-7);
  CHECK(max_rel_error(s, [&](Tape& t, Var v) {
          return ad::sum_squares(ad::scalar_mul(v, t.constant(x)));
        }) < 1e-7);
  CHECK(max_rel_error(s, [&](Tape& t, Var v) {
          return ad::sum_squares(
              ad::add(t.constant(x), ad::broadcast_scalar(v, 4, 3)));
        }) < 1e-7);

  const auto bias = random_matrix(1, 3, rng);
  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          return ad::sum_squares(ad::add_row_vector(v, t.constant(bias)));
        }) < 1e-7);
  CHECK(max_rel_error(bias, [&](Tape& t, Var v) {
          return ad::sum_squares(ad::add_row_vector(t.constant(x), v));
        }) < 1e-7);
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(104);
  // Keep entries away from the relu kink.
  Eigen::MatrixXd x = random_matrix(4, 4, rng, -2.0, 2.0);
  for (int i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.5;

  CHECK(max_rel_error(x, [](Tape&, Var v) {
          return ad::sum_squares(ad::sigmoid(v));
        }) < 1e-7);
  CHECK(max_rel_error(x, [](Tape&, Var v) {
          return ad::sum_squares(ad::tanh(v));
        }) < 1e-7);
  CHECK(max_rel_error(x, [](Tape&, Var v) {
          return ad::sum_squares(ad::relu(v));
        }) < 1e-6);
}

TEST_CASE("softmax row gradients match finite differences") {
  Rng rng(105);
  const auto x = random_matrix(5, 6, rng, -2.0, 2.0);
  const auto w = random_matrix(5, 6, rng);
  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          // Weighted readout so off-diagonal Jacobian terms matter.
          return ad::sum_squares(ad::mul(ad::softmax_rows(v), t.constant(w)));
        }) < 1e-7);
}

TEST_CASE("nonnegative row normalization gradients match finite differences") {
  Rng rng(109);
  Eigen::MatrixXd x = random_matrix(5, 5, rng, -1.0, 1.0);
  // Stay clear of the relu kink and keep every row strictly positive-sum.
  for (int i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 0.1) x.data()[i] = 0.4;
  const auto w = random_matrix(5, 5, rng);

  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          return ad::sum_squares(ad::mul(ad::relu_l1_rows(v), t.constant(w)));
        }) < 1e-6);

  // A row-stochastic nonnegative input passes through unchanged.
  Tape tape;
  Eigen::MatrixXd stochastic(3, 3);
  stochastic << 0.0, 0.5, 0.5,
                1.0, 0.0, 0.0,
                0.2, 0.3, 0.5;
  const auto out = ad::relu_l1_rows(tape.constant(stochastic));
  CHECK((out.value() - stochastic).cwiseAbs().maxCoeff() < 1e-15);

  // All-nonpositive rows fall back to a self-loop.
  Eigen::MatrixXd dead(2, 2);
  dead << -1.0, -2.0,
          0.5, 0.5;
  const auto fallback = ad::relu_l1_rows(tape.constant(dead));
  CHECK(fallback.value()(0, 0) == 1.0);
  CHECK(fallback.value()(0, 1) == 0.0);
}

TEST_CASE("layer norm gradients match finite differences") {
  Rng rng(106);
  const auto x = random_matrix(5, 7, rng, -2.0, 2.0);
  const auto gamma = random_matrix(1, 7, rng, 0.5, 1.5);
  const auto beta = random_matrix(1, 7, rng);
  const auto w = random_matrix(5, 7, rng);

  const auto through = [&](Tape& t, Var xx, Var gg, Var bb) {
    return ad::sum_squares(
        ad::mul(ad::layer_norm_rows(xx, gg, bb), t.constant(w)));
  };
  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          return through(t, v, t.constant(gamma), t.constant(beta));
        }) < 1e-6);
  CHECK(max_rel_error(gamma, [&](Tape& t, Var v) {
          return through(t, t.constant(x), v, t.constant(beta));
        }) < 1e-6);
  CHECK(max_rel_error(beta, [&](Tape& t, Var v) {
          return through(t, t.constant(x), t.constant(gamma), v);
        }) < 1e-6);
}

TEST_CASE("slice and concatenation gradients") {
  Rng rng(107);
  const auto x = random_matrix(6, 5, rng);

  CHECK(max_rel_error(x, [](Tape&, Var v) {
          return ad::sum_squares(ad::slice_rows(v, 1, 3));
        }) < 1e-7);
  CHECK(max_rel_error(x, [](Tape&, Var v) {
          return ad::sum_squares(ad::slice_cols(v, 2, 2));
        }) < 1e-7);
  CHECK(max_rel_error(x, [](Tape&, Var v) {
          // Overlapping slices force adjoint accumulation in the source.
          return ad::sum_squares(
              ad::add(ad::slice_rows(v, 0, 4), ad::slice_rows(v, 2, 4)));
        }) < 1e-7);
  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          const auto other = t.constant(Eigen::MatrixXd::Ones(2, 5));
          return ad::sum_squares(ad::vcat({v, other, v}));
        }) < 1e-7);
  CHECK(max_rel_error(x, [&](Tape& t, Var v) {
          const auto other = t.constant(Eigen::MatrixXd::Ones(6, 2));
          return ad::sum_squares(ad::hcat(v, other));
        }) < 1e-7);
}

TEST_CASE("reused nodes accumulate adjoints from every consumer") {
  Rng rng(108);
  const auto x = random_matrix(3, 3, rng);
  CHECK(max_rel_error(x, [](Tape&, Var v) {
          // v appears three times, once quadratically.
          return ad::sum_squares(ad::add(ad::matmul(v, v), ad::scale(v, 0.5)));
        }) < 1e-6);
}

TEST_CASE("constants do not accumulate gradients") {
  Tape tape;
  const auto c = tape.constant(Eigen::MatrixXd::Ones(2, 2));
  const auto x = tape.leaf(Eigen::MatrixXd::Ones(2, 2));
  const auto loss = ad::sum_squares(ad::mul(c, x));
  tape.backward(loss);
  CHECK(tape.grad(c).isZero());
  CHECK(!tape.grad(x).isZero());
}
