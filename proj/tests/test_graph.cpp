#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "stimpute/graph.hpp"
#include "stimpute/rng.hpp"

using namespace stimpute;

namespace {

Eigen::MatrixXd random_matrix(int n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// Direct evaluation of the degree-k polynomial with the closed-form
// coefficient table; independent of the recursion under test.
Eigen::MatrixXd chebyshev_direct(const Eigen::MatrixXd& m, int k) {
  static const std::vector<std::vector<double>> coeffs = {
      {1},
      {0, 1},
      {-1, 0, 2},
      {0, -3, 0, 4},
      {1, 0, -8, 0, 8},
      {0, 5, 0, -20, 0, 16},
      {-1, 0, 18, 0, -48, 0, 32},
  };
  const auto n = m.rows();
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t j = 0; j < coeffs[static_cast<std::size_t>(k)].size(); ++j) {
    out += coeffs[static_cast<std::size_t>(k)][j] * power;
    power = power * m;
  }
  return out;
}

Eigen::MatrixXd scaled_to_unit_spectral_radius(Eigen::MatrixXd m) {
  const double radius = m.eigenvalues().cwiseAbs().maxCoeff();
  if (radius > 1e-12) m /= radius * 1.01;
  return m;
}

}  // namespace

TEST_CASE("gaussian adjacency follows the thresholded kernel") {
  Eigen::MatrixXd d(3, 3);
  d << 0.0, 2.0, 9.0,
       2.0, 0.0, 2.0,
       9.0, 2.0, 0.0;
  const auto a = build_gaussian_adjacency(d, 5.0, 2.0);

  CHECK(a(0, 0) == 1.0);                                  // dist 0
  CHECK(a(0, 2) == 0.0);                                  // beyond kappa
  CHECK_THAT(a(0, 1), Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-12));  // dist == delta
}

TEST_CASE("gaussian adjacency derives delta from the distance spread") {
  Eigen::MatrixXd d(2, 2);
  d << 0.0, 3.0,
       5.0, 0.0;
  // Off-diagonal population std of {3, 5} is 1.
  const auto a = build_gaussian_adjacency(d, 10.0);
  CHECK_THAT(a(0, 1), Catch::Matchers::WithinAbs(std::exp(-9.0), 1e-12));
  CHECK_THAT(a(1, 0), Catch::Matchers::WithinAbs(std::exp(-25.0), 1e-12));
}

TEST_CASE("gaussian kernel is nonincreasing in distance up to the threshold") {
  Rng rng(7);
  const double kappa = 4.0, delta = 1.5;
  double prev = 2.0;
  for (double dist = 0.0; dist <= kappa; dist += 0.05) {
    Eigen::MatrixXd d(2, 2);
    d << 0.0, dist, dist, 0.0;
    const auto a = build_gaussian_adjacency(d, kappa, delta);
    CHECK(a(0, 1) <= prev + 1e-15);
    prev = a(0, 1);
  }
}

TEST_CASE("gaussian adjacency rejects malformed distances") {
  CHECK_THROWS_AS(build_gaussian_adjacency(Eigen::MatrixXd::Zero(2, 3), 1.0, 1.0),
                  DataError);
  Eigen::MatrixXd neg(2, 2);
  neg << 0.0, -1.0, 1.0, 0.0;
  CHECK_THROWS_AS(build_gaussian_adjacency(neg, 1.0, 1.0), DataError);
  Eigen::MatrixXd nan(2, 2);
  nan << 0.0, std::nan(""), 1.0, 0.0;
  CHECK_THROWS_AS(build_gaussian_adjacency(nan, 1.0, 1.0), DataError);
  Eigen::MatrixXd ok(2, 2);
  ok << 0.0, 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(build_gaussian_adjacency(ok, -1.0, 1.0), std::invalid_argument);
}

TEST_CASE("binary adjacency from edge lists") {
  CHECK(build_binary_adjacency({}, 3).isZero());

  const auto one = build_binary_adjacency({{0, 1}}, 2);
  Eigen::MatrixXd expect(2, 2);
  expect << 0, 1, 0, 0;
  CHECK(one == expect);

  const auto both = build_binary_adjacency({{0, 1}, {1, 0}}, 2);
  expect << 0, 1, 1, 0;
  CHECK(both == expect);

  CHECK_THROWS_AS(build_binary_adjacency({{0, 2}}, 2), DataError);
  CHECK_THROWS_AS(build_binary_adjacency({{-1, 0}}, 2), DataError);
}

TEST_CASE("transitions row-normalize the adjacency and its transpose") {
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 1, 0;
  auto t = compute_transitions(a);
  CHECK(t.forward == a);
  CHECK(t.backward == a);

  a << 0, 2, 1, 0;
  t = compute_transitions(a);
  Eigen::MatrixXd expect(2, 2);
  expect << 0, 1, 1, 0;
  CHECK(t.forward == expect);
}

TEST_CASE("rows without outgoing weight become unit self-loops") {
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 0, 0;
  const auto t = compute_transitions(a);

  Eigen::MatrixXd fwd(2, 2), bwd(2, 2);
  fwd << 0, 1, 0, 1;
  bwd << 1, 0, 1, 0;
  CHECK(t.forward == fwd);
  CHECK(t.backward == bwd);
}

TEST_CASE("transition rows sum to one for random graphs with isolated nodes") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    Eigen::MatrixXd a = random_matrix(n, rng);
    // Knock out a couple of rows and columns entirely.
    a.row(static_cast<int>(rng.uniform_int(0, n - 1))).setZero();
    a.col(static_cast<int>(rng.uniform_int(0, n - 1))).setZero();
    const auto t = compute_transitions(a);
    for (int i = 0; i < n; ++i) {
      CHECK_THAT(t.forward.row(i).sum(), Catch::Matchers::WithinAbs(1.0, 1e-9));
      CHECK_THAT(t.backward.row(i).sum(), Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
    // Backward of A is forward of A transposed.
    const auto dual = compute_transitions(a.transpose());
    CHECK(t.backward == dual.forward);
  }
}

TEST_CASE("basis recursion matches direct polynomial evaluation") {
  Rng rng(3);

  const auto identity_only = chebyshev_basis(Eigen::MatrixXd::Random(4, 4), 0);
  REQUIRE(identity_only.size() == 1);
  CHECK(identity_only[0] == Eigen::MatrixXd::Identity(4, 4));

  const Eigen::MatrixXd m = random_matrix(5, rng, -1.0, 1.0);
  const auto basis = chebyshev_basis(m, 2);
  REQUIRE(basis.size() == 3);
  CHECK(basis[1] == m);
  const Eigen::MatrixXd f2 = 2.0 * m * m - Eigen::MatrixXd::Identity(5, 5);
  CHECK((basis[2] - f2).cwiseAbs().maxCoeff() < 1e-12);

  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd big =
        scaled_to_unit_spectral_radius(random_matrix(6, rng, -1.0, 1.0));
    const auto deep = chebyshev_basis(big, 5);
    for (int k = 0; k <= 5; ++k) {
      const auto direct = chebyshev_direct(big, k);
      CHECK((deep[static_cast<std::size_t>(k)] - direct).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  CHECK_THROWS_AS(chebyshev_basis(m, -1), std::invalid_argument);
}

TEST_CASE("graph triplet files round-trip with stable node order") {
  TrafficGraph g;
  g.node_ids = {"n0", "n1", "n2", "n3"};
  g.adjacency = Eigen::MatrixXd::Zero(4, 4);
  g.adjacency(0, 1) = 0.5;
  g.adjacency(1, 2) = 0.25;
  g.kind = GraphKind::SensorDistance;

  const auto path = std::filesystem::temp_directory_path() / "stimpute_graph_test.csv";
  save_graph(g, path.string());
  const auto loaded = load_graph(path.string());

  CHECK(loaded.node_ids == g.node_ids);
  CHECK(loaded.adjacency == g.adjacency);
  CHECK(loaded.kind == GraphKind::SensorDistance);

  const auto forced = load_graph(path.string(), GraphKind::SensorDistance);
  CHECK(forced.kind == GraphKind::SensorDistance);
  std::filesystem::remove(path);
}

TEST_CASE("binary graph files are recognized as connectivity") {
  TrafficGraph g;
  g.node_ids = {"a", "b"};
  g.adjacency = build_binary_adjacency({{0, 1}, {1, 0}}, 2);
  g.kind = GraphKind::LinkConnectivity;

  const auto path = std::filesystem::temp_directory_path() / "stimpute_graph_bin.csv";
  save_graph(g, path.string());
  CHECK(load_graph(path.string()).kind == GraphKind::LinkConnectivity);
  std::filesystem::remove(path);
}
