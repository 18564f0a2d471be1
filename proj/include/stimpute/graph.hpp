#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stimpute/errors.hpp"

namespace stimpute {

enum class GraphKind { SensorDistance, LinkConnectivity };

// A road network: ordered node identifiers plus a weighted directed
// adjacency. Sensor graphs may carry a separate distance matrix (miles),
// which spatially-correlated masking needs for nearest-node queries.
struct TrafficGraph {
  std::vector<std::string> node_ids;
  Eigen::MatrixXd adjacency;
  GraphKind kind = GraphKind::SensorDistance;
  std::optional<Eigen::MatrixXd> distances;

  int size() const { return static_cast<int>(node_ids.size()); }

  void validate() const {
    const int n = size();
    if (adjacency.rows() != n || adjacency.cols() != n)
      throw DataError("graph adjacency is " + std::to_string(adjacency.rows()) + "x" +
                      std::to_string(adjacency.cols()) + " but the graph has " +
                      std::to_string(n) + " nodes");
    if ((adjacency.array() < 0.0).any())
      throw DataError("graph adjacency contains negative weights");
    if (kind == GraphKind::LinkConnectivity &&
        !((adjacency.array() == 0.0) || (adjacency.array() == 1.0)).all())
      throw DataError("connectivity adjacency must be binary");
    if (distances && (distances->rows() != n || distances->cols() != n))
      throw DataError("distance matrix shape does not match the graph");
  }
};

// Row-stochastic diffusion transition matrices, forward along edge
// direction and backward along the transpose.
struct TransitionPair {
  Eigen::MatrixXd forward;
  Eigen::MatrixXd backward;
};

// Thresholded Gaussian kernel over pairwise distances:
// A_ij = exp(-(dist_ij/delta)^2) when dist_ij <= kappa, else 0.
// When delta is not given it defaults to the standard deviation of the
// finite off-diagonal distances. Entries of +infinity are treated as
// unreachable pairs; NaN or negative distances are rejected.
inline Eigen::MatrixXd build_gaussian_adjacency(const Eigen::MatrixXd& distances,
                                                double kappa,
                                                std::optional<double> delta = {}) {
  const auto n = distances.rows();
  if (distances.cols() != n) throw DataError("distance matrix must be square");
  if (kappa <= 0.0) throw std::invalid_argument("kappa must be positive");
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = distances(i, j);
      if (std::isnan(d)) throw DataError("distance matrix contains NaN");
      if (d < 0.0) throw DataError("distance matrix contains a negative entry");
    }

  double scale;
  if (delta) {
    scale = *delta;
    if (scale <= 0.0) throw std::invalid_argument("delta must be positive");
  } else {
    double sum = 0.0, sumsq = 0.0;
    std::int64_t count = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j || !std::isfinite(distances(i, j))) continue;
        sum += distances(i, j);
        sumsq += distances(i, j) * distances(i, j);
        ++count;
      }
    if (count == 0) throw DataError("no finite off-diagonal distances to derive delta from");
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sumsq / static_cast<double>(count) - mean * mean);
    scale = std::sqrt(var);
    if (scale <= 0.0) throw DataError("distance spread is zero; pass delta explicitly");
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = distances(i, j);
      if (d <= kappa) a(i, j) = std::exp(-(d / scale) * (d / scale));
    }
  return a;
}

// Binary adjacency from an edge list; A_ij = 1 for every listed (i, j).
inline Eigen::MatrixXd build_binary_adjacency(
    const std::vector<std::pair<int, int>>& edges, int n) {
  if (n < 0) throw std::invalid_argument("node count must be nonnegative");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [i, j] : edges) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw DataError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                      ") is out of range for " + std::to_string(n) + " nodes");
    a(i, j) = 1.0;
  }
  return a;
}

// Row-normalize the adjacency and its transpose into forward/backward
// transition matrices. A row with no outgoing weight becomes a unit
// self-loop so both matrices stay row-stochastic.
inline TransitionPair compute_transitions(const Eigen::MatrixXd& adjacency) {
  if (adjacency.rows() != adjacency.cols())
    throw DataError("adjacency must be square");
  if ((adjacency.array() < 0.0).any())
    throw DataError("adjacency must be nonnegative");

  const auto normalize = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double s = m.row(i).sum();
      if (s > 0.0) {
        out.row(i) /= s;
      } else {
        out.row(i).setZero();
        out(i, i) = 1.0;
      }
    }
    return out;
  };

  return TransitionPair{normalize(adjacency), normalize(adjacency.transpose())};
}

// First steps+1 matrices of the recursion F_0 = I, F_1 = M,
// F_k = 2 M F_{k-1} - F_{k-2}.
inline std::vector<Eigen::MatrixXd> chebyshev_basis(const Eigen::MatrixXd& m,
                                                    int steps) {
  if (m.rows() != m.cols()) throw DataError("basis input must be square");
  if (steps < 0) throw std::invalid_argument("diffusion steps must be >= 0");
  std::vector<Eigen::MatrixXd> basis;
  basis.reserve(static_cast<std::size_t>(steps) + 1);
  basis.push_back(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  if (steps >= 1) basis.push_back(m);
  for (int k = 2; k <= steps; ++k)
    basis.push_back(2.0 * m * basis[static_cast<std::size_t>(k - 1)] -
                    basis[static_cast<std::size_t>(k - 2)]);
  return basis;
}

namespace detail {

struct Triplet {
  std::string src, dst;
  double weight;
};

inline std::vector<Triplet> read_triplets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<Triplet> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Triplet t;
    std::string w;
    if (!std::getline(ss, t.src, ',') || !std::getline(ss, t.dst, ',') ||
        !std::getline(ss, w))
      throw DataError(path + ":" + std::to_string(lineno) + ": expected src,dst,weight");
    try {
      std::size_t pos = 0;
      t.weight = std::stod(w, &pos);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad weight '" + w + "'");
    }
    if (!std::isfinite(t.weight))
      throw DataError(path + ":" + std::to_string(lineno) + ": non-finite weight");
    rows.push_back(std::move(t));
  }
  return rows;
}

}  // namespace detail

// Load a graph from comma-separated `src_id,dst_id,weight` triplets.
// Node order is the order of first appearance. A zero-weight self triplet
// (`id,id,0`) registers an isolated node. Unless `kind` is forced, an
// all-binary weight set is taken as link connectivity.
inline TrafficGraph load_graph(const std::string& path,
                               std::optional<GraphKind> kind = {}) {
  const auto rows = detail::read_triplets(path);
  TrafficGraph g;
  std::map<std::string, int> index;
  const auto intern = [&](const std::string& id) {
    auto it = index.find(id);
    if (it != index.end()) return it->second;
    const int i = static_cast<int>(g.node_ids.size());
    index.emplace(id, i);
    g.node_ids.push_back(id);
    return i;
  };
  for (const auto& t : rows) {
    intern(t.src);
    intern(t.dst);
  }
  const int n = g.size();
  if (n == 0) throw DataError(path + ": graph file lists no nodes");
  g.adjacency = Eigen::MatrixXd::Zero(n, n);
  bool binary = true;
  for (const auto& t : rows) {
    if (t.weight < 0.0) throw DataError(path + ": negative weight on edge " + t.src + "->" + t.dst);
    g.adjacency(index[t.src], index[t.dst]) = t.weight;
    if (t.weight != 0.0 && t.weight != 1.0) binary = false;
  }
  g.kind = kind.value_or(binary ? GraphKind::LinkConnectivity
                                : GraphKind::SensorDistance);
  g.validate();
  return g;
}

// Load a distance matrix (same triplet format, weight = miles) aligned to
// the graph's node order. Unlisted pairs are +infinity, diagonal 0.
inline Eigen::MatrixXd load_distances(const std::string& path,
                                      const TrafficGraph& graph) {
  const auto rows = detail::read_triplets(path);
  std::map<std::string, int> index;
  for (int i = 0; i < graph.size(); ++i) index.emplace(graph.node_ids[i], i);
  const int n = graph.size();
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(
      n, n, std::numeric_limits<double>::infinity());
  d.diagonal().setZero();
  for (const auto& t : rows) {
    const auto si = index.find(t.src);
    const auto di = index.find(t.dst);
    if (si == index.end() || di == index.end())
      throw DataError(path + ": node '" + (si == index.end() ? t.src : t.dst) +
                      "' is not part of the graph");
    if (t.weight < 0.0) throw DataError(path + ": negative distance");
    d(si->second, di->second) = t.weight;
  }
  return d;
}

// The leading zero-weight self triplets pin the node order so a reload
// sees the same indexing.
inline void save_graph(const TrafficGraph& graph, const std::string& path) {
  graph.validate();
  std::ostringstream out;
  out << "# src_id,dst_id,weight\n";
  const int n = graph.size();
  for (int i = 0; i < n; ++i)
    out << graph.node_ids[i] << ',' << graph.node_ids[i] << ",0\n";
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (graph.adjacency(i, j) != 0.0) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", graph.adjacency(i, j));
        out << graph.node_ids[i] << ',' << graph.node_ids[j] << ',' << buf << '\n';
      }
    }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << out.str();
}

}  // namespace stimpute
