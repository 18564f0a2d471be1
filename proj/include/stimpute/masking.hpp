#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "stimpute/errors.hpp"
#include "stimpute/graph.hpp"
#include "stimpute/rng.hpp"

namespace stimpute {

enum class MissingPattern { RM, TCM, SCM, BM };

inline std::string to_string(MissingPattern p) {
  switch (p) {
    case MissingPattern::RM: return "rm";
    case MissingPattern::TCM: return "tcm";
    case MissingPattern::SCM: return "scm";
    case MissingPattern::BM: return "bm";
  }
  return "?";
}

inline MissingPattern parse_pattern(const std::string& s) {
  if (s == "rm") return MissingPattern::RM;
  if (s == "tcm") return MissingPattern::TCM;
  if (s == "scm") return MissingPattern::SCM;
  if (s == "bm") return MissingPattern::BM;
  throw std::invalid_argument("unknown missing pattern '" + s + "'");
}

// Node-by-time indicator matrix: 1 = observed, 0 = missing.
struct MaskMatrix {
  Eigen::MatrixXi values;
  MissingPattern pattern = MissingPattern::RM;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  int nodes() const { return static_cast<int>(values.rows()); }
  int steps() const { return static_cast<int>(values.cols()); }
};

struct MissingSpec {
  MissingPattern pattern = MissingPattern::RM;
  double ratio = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_ratio(double r) {
  if (!(r >= 0.0 && r < 1.0))
    throw std::invalid_argument("missing ratio must lie in [0, 1)");
}

// The floor(N*r) nodes nearest to v, v itself first. Sensor graphs order
// by the distance row of v (ties by index); connectivity graphs use
// breadth-first discovery order with neighbors visited in ascending index
// over the undirected view. If the component is exhausted early, the
// remaining slots are filled in index order so the count is exact.
inline std::vector<int> nearest_nodes(const TrafficGraph& graph, int v, int count) {
  const int n = graph.size();
  if (count <= 0) return {};
  if (count > n) count = n;
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(count));

  if (graph.kind == GraphKind::SensorDistance) {
    if (!graph.distances)
      throw DataError("sensor-distance graph has no distance matrix; nearest-node masking needs one");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const auto& d = *graph.distances;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double da = a == v ? 0.0 : d(v, a);
      const double db = b == v ? 0.0 : d(v, b);
      if (da != db) return da < db;
      return a < b;
    });
    picked.assign(order.begin(), order.begin() + count);
    return picked;
  }

  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> frontier{v};
  seen[static_cast<std::size_t>(v)] = 1;
  while (!frontier.empty() && static_cast<int>(picked.size()) < count) {
    const int u = frontier.front();
    frontier.pop_front();
    picked.push_back(u);
    for (int w = 0; w < n; ++w) {
      if (seen[static_cast<std::size_t>(w)]) continue;
      if (graph.adjacency(u, w) != 0.0 || graph.adjacency(w, u) != 0.0) {
        seen[static_cast<std::size_t>(w)] = 1;
        frontier.push_back(w);
      }
    }
  }
  for (int w = 0; w < n && static_cast<int>(picked.size()) < count; ++w)
    if (!seen[static_cast<std::size_t>(w)]) picked.push_back(w);
  return picked;
}

}  // namespace detail

// Random missing: every entry is dropped independently with probability r.
// Entries are drawn node-major.
inline MaskMatrix gen_rm(int nodes, int steps, double ratio, Rng& rng) {
  detail::check_ratio(ratio);
  MaskMatrix mask{Eigen::MatrixXi::Ones(nodes, steps), MissingPattern::RM, ratio,
                  rng.seed()};
  for (int v = 0; v < nodes; ++v)
    for (int t = 0; t < steps; ++t)
      if (rng.uniform01() < ratio) mask.values(v, t) = 0;
  return mask;
}

// Temporally correlated missing: per node, exactly floor(T*r) consecutive
// steps starting at a random point, wrapping across the window boundary
// when the start is late.
inline MaskMatrix gen_tcm(int nodes, int steps, double ratio, Rng& rng) {
  detail::check_ratio(ratio);
  MaskMatrix mask{Eigen::MatrixXi::Ones(nodes, steps), MissingPattern::TCM, ratio,
                  rng.seed()};
  const int m = static_cast<int>(std::floor(steps * ratio));
  for (int v = 0; v < nodes; ++v) {
    const int start = static_cast<int>(rng.uniform_int(0, steps - 1));
    if (m == 0) continue;
    if (start + m <= steps) {
      for (int t = start; t < start + m; ++t) mask.values(v, t) = 0;
    } else {
      for (int t = start; t < steps; ++t) mask.values(v, t) = 0;
      const int carry = m - (steps - start);
      for (int t = 0; t < carry; ++t) mask.values(v, t) = 0;
    }
  }
  return mask;
}

// Spatially correlated missing: per time slot, a random node and its
// floor(N*r) nearest nodes are dropped.
inline MaskMatrix gen_scm(const TrafficGraph& graph, int nodes, int steps,
                          double ratio, Rng& rng) {
  detail::check_ratio(ratio);
  if (graph.size() != nodes)
    throw DataError("mask shape does not match the graph node count");
  MaskMatrix mask{Eigen::MatrixXi::Ones(nodes, steps), MissingPattern::SCM, ratio,
                  rng.seed()};
  const int m = static_cast<int>(std::floor(nodes * ratio));
  for (int t = 0; t < steps; ++t) {
    const int v = static_cast<int>(rng.uniform_int(0, nodes - 1));
    for (int u : detail::nearest_nodes(graph, v, m)) mask.values(u, t) = 0;
  }
  return mask;
}

// Block missing: the time axis is tiled with blocks of random length, each
// dropping the floor(N*r) nodes nearest a random node for its whole span.
// Per block the draw order is length first, then node.
inline MaskMatrix gen_bm(const TrafficGraph& graph, int nodes, int steps,
                         double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("block-missing ratio must lie in (0, 1)");
  if (steps < 2) throw std::invalid_argument("block missing needs at least 2 steps");
  if (graph.size() != nodes)
    throw DataError("mask shape does not match the graph node count");
  MaskMatrix mask{Eigen::MatrixXi::Ones(nodes, steps), MissingPattern::BM, ratio,
                  rng.seed()};
  const int m = static_cast<int>(std::floor(nodes * ratio));
  int i = 0;
  while (i < steps) {
    // Final block absorbs the tail once no full draw range is left.
    const int len = (steps - i - 1 >= 1)
                        ? static_cast<int>(rng.uniform_int(1, steps - i - 1))
                        : steps - i;
    const int v = static_cast<int>(rng.uniform_int(0, nodes - 1));
    const auto dropped = detail::nearest_nodes(graph, v, m);
    for (int t = i; t < i + len; ++t)
      for (int u : dropped) mask.values(u, t) = 0;
    i += len;
  }
  return mask;
}

inline MaskMatrix make_mask(const MissingSpec& spec, int nodes, int steps,
                            const TrafficGraph* graph = nullptr) {
  Rng rng(spec.seed);
  switch (spec.pattern) {
    case MissingPattern::RM: return gen_rm(nodes, steps, spec.ratio, rng);
    case MissingPattern::TCM: return gen_tcm(nodes, steps, spec.ratio, rng);
    case MissingPattern::SCM:
      if (!graph) throw DataError("spatially correlated masking needs a graph");
      return gen_scm(*graph, nodes, steps, spec.ratio, rng);
    case MissingPattern::BM:
      if (!graph) throw DataError("block masking needs a graph");
      return gen_bm(*graph, nodes, steps, spec.ratio, rng);
  }
  throw std::invalid_argument("unknown pattern");
}

// Elementwise product: masked entries become exactly zero.
inline Eigen::MatrixXd apply_mask(const Eigen::MatrixXd& x, const MaskMatrix& mask) {
  if (x.rows() != mask.values.rows() || x.cols() != mask.values.cols())
    throw DataError("mask shape does not match the data");
  return x.array() * mask.values.cast<double>().array();
}

inline void save_mask(const MaskMatrix& mask, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (int v = 0; v < mask.nodes(); ++v) {
    for (int t = 0; t < mask.steps(); ++t) {
      if (t) out << ',';
      out << mask.values(v, t);
    }
    out << '\n';
  }
}

inline MaskMatrix load_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::vector<int>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<int> row;
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok != "0" && tok != "1")
        throw DataError(path + ":" + std::to_string(lineno) + ": mask entries must be 0 or 1");
      row.push_back(tok == "1" ? 1 : 0);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path + ":" + std::to_string(lineno) + ": ragged mask row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": empty mask file");
  MaskMatrix mask;
  mask.values.resize(static_cast<int>(rows.size()),
                     static_cast<int>(rows.front().size()));
  for (std::size_t v = 0; v < rows.size(); ++v)
    for (std::size_t t = 0; t < rows.front().size(); ++t)
      mask.values(static_cast<int>(v), static_cast<int>(t)) = rows[v][t];
  return mask;
}

}  // namespace stimpute
