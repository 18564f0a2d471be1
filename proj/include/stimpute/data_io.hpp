#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stimpute/errors.hpp"
#include "stimpute/fsutil.hpp"
#include "stimpute/graph.hpp"
#include "stimpute/rng.hpp"

namespace stimpute {

// Node-by-time speed observations. Zeros mean "no data observed"; the
// timestamp axis is start_time plus step_seconds per column.
struct SpeedMatrix {
  Eigen::MatrixXd values;  // N x P
  std::vector<std::string> node_ids;
  std::time_t start_time = 0;
  int step_seconds = 300;

  int nodes() const { return static_cast<int>(values.rows()); }
  int steps() const { return static_cast<int>(values.cols()); }

  void validate() const {
    if (static_cast<int>(node_ids.size()) != values.rows())
      throw DataError("speed matrix header does not match its row count");
    if (!values.allFinite())
      throw DataError("speed matrix contains non-finite values");
    if (step_seconds <= 0) throw DataError("sampling step must be positive");
  }
};

namespace detail {

inline std::string format_time(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  return buf;
}

inline std::time_t parse_time(const std::string& s, const std::string& where) {
  std::tm tm{};
  if (::strptime(s.c_str(), "%Y-%m-%dT%H:%M:%S", &tm) == nullptr)
    throw DataError(where + ": bad timestamp '" + s + "' (expected ISO-8601)");
  return timegm(&tm);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream ss(line);
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace detail

// File format: first line the comma-separated node ids, then one line per
// time step, `timestamp,v_1,...,v_N`.
inline SpeedMatrix load_speed_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  SpeedMatrix m;
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw DataError(path + ": missing node-id header");
  m.node_ids = detail::split_csv(line);
  const auto n = static_cast<Eigen::Index>(m.node_ids.size());

  std::vector<std::vector<double>> rows;
  std::vector<std::time_t> stamps;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tokens = detail::split_csv(line);
    if (static_cast<Eigen::Index>(tokens.size()) != n + 1)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(n + 1) + " fields, got " +
                      std::to_string(tokens.size()));
    stamps.push_back(detail::parse_time(tokens[0], path + ":" + std::to_string(lineno)));
    std::vector<double> row(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::string& tok = tokens[static_cast<std::size_t>(j + 1)];
      try {
        std::size_t pos = 0;
        row[static_cast<std::size_t>(j)] = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": column " +
                        std::to_string(j + 2) + ": bad value '" + tok + "'");
      }
      if (!std::isfinite(row[static_cast<std::size_t>(j)]))
        throw DataError(path + ":" + std::to_string(lineno) + ": column " +
                        std::to_string(j + 2) + ": non-finite value");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  m.values.resize(n, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (Eigen::Index v = 0; v < n; ++v)
      m.values(v, static_cast<Eigen::Index>(t)) = rows[t][static_cast<std::size_t>(v)];
  m.start_time = stamps.front();
  m.step_seconds = stamps.size() > 1
                       ? static_cast<int>(stamps[1] - stamps[0])
                       : 300;
  m.validate();
  return m;
}

inline void save_speed_matrix(const SpeedMatrix& m, const std::string& path) {
  m.validate();
  std::ostringstream out;
  for (std::size_t i = 0; i < m.node_ids.size(); ++i) {
    if (i) out << ',';
    out << m.node_ids[i];
  }
  out << '\n';
  char buf[64];
  for (int t = 0; t < m.steps(); ++t) {
    out << detail::format_time(m.start_time + static_cast<std::time_t>(t) * m.step_seconds);
    for (int v = 0; v < m.nodes(); ++v) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.values(v, t));
      out << ',' << buf;
    }
    out << '\n';
  }
  atomic_write_file(path, out.str());
}

// Ensure the matrix and graph agree on the node set, returning the graph
// with rows/columns reordered to the matrix ordering.
inline TrafficGraph align_graph(const TrafficGraph& graph, const SpeedMatrix& m) {
  if (graph.size() != m.nodes())
    throw ShapeError("graph has " + std::to_string(graph.size()) +
                    " nodes but the speed matrix has " + std::to_string(m.nodes()));
  std::map<std::string, int> index;
  for (int i = 0; i < graph.size(); ++i) index.emplace(graph.node_ids[i], i);
  std::vector<int> order(static_cast<std::size_t>(m.nodes()));
  for (int i = 0; i < m.nodes(); ++i) {
    const auto it = index.find(m.node_ids[static_cast<std::size_t>(i)]);
    if (it == index.end())
      throw ShapeError("node '" + m.node_ids[static_cast<std::size_t>(i)] +
                      "' from the speed matrix is not in the graph");
    order[static_cast<std::size_t>(i)] = it->second;
  }
  TrafficGraph out;
  out.node_ids = m.node_ids;
  out.kind = graph.kind;
  const int n = graph.size();
  out.adjacency.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out.adjacency(i, j) = graph.adjacency(order[static_cast<std::size_t>(i)],
                                            order[static_cast<std::size_t>(j)]);
  if (graph.distances) {
    Eigen::MatrixXd d(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        d(i, j) = (*graph.distances)(order[static_cast<std::size_t>(i)],
                                     order[static_cast<std::size_t>(j)]);
    out.distances = std::move(d);
  }
  out.validate();
  return out;
}

// Desk-scale fixture: a ring road of N nodes whose speeds follow a daily
// sinusoid, phase-shifted around the ring so neighbors are correlated. The
// noise splits into a network-wide component shared by all nodes at a time
// step and per-node measurement noise; common_weight sets the shared
// fraction of the noise variance.
struct SynthesizedData {
  SpeedMatrix speeds;
  TrafficGraph graph;
};

inline SynthesizedData synthesize_dataset(int nodes, int steps,
                                          std::uint64_t seed,
                                          double noise_sigma = 1.0,
                                          int steps_per_day = 288,
                                          double common_weight = 0.5) {
  if (nodes < 2 || steps < 2)
    throw std::invalid_argument("fixture needs at least 2 nodes and 2 steps");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(common_weight >= 0.0 && common_weight <= 1.0))
    throw std::invalid_argument("common noise weight must lie in [0, 1]");

  Rng rng(seed);
  SynthesizedData out;

  out.graph.kind = GraphKind::LinkConnectivity;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < nodes; ++i) {
    out.graph.node_ids.push_back("node_" + std::to_string(i));
    edges.emplace_back(i, (i + 1) % nodes);
    edges.emplace_back((i + 1) % nodes, i);
  }
  out.graph.adjacency = build_binary_adjacency(edges, nodes);

  const double shared_scale = noise_sigma * std::sqrt(common_weight);
  const double local_scale = noise_sigma * std::sqrt(1.0 - common_weight);
  constexpr double kTau = 6.283185307179586;

  out.speeds.node_ids = out.graph.node_ids;
  out.speeds.start_time = detail::parse_time("2012-03-01T00:00:00", "fixture");
  out.speeds.step_seconds = 86400 / steps_per_day;
  out.speeds.values.resize(nodes, steps);
  for (int t = 0; t < steps; ++t) {
    const double shared = shared_scale != 0.0 ? shared_scale * rng.normal() : 0.0;
    for (int v = 0; v < nodes; ++v) {
      const double phase =
          static_cast<double>(t) / steps_per_day + static_cast<double>(v) / nodes;
      const double local = local_scale != 0.0 ? local_scale * rng.normal() : 0.0;
      out.speeds.values(v, t) = 55.0 + 10.0 * std::sin(kTau * phase) + shared + local;
    }
  }
  return out;
}

struct DatasetSummary {
  int nodes = 0;
  int steps = 0;
  double observed_fraction = 0.0;
  std::optional<double> mean;
  std::optional<double> stddev;
};

// Summary over observed (nonzero) entries.
inline DatasetSummary describe_dataset(const SpeedMatrix& m) {
  m.validate();
  DatasetSummary s;
  s.nodes = m.nodes();
  s.steps = m.steps();
  double sum = 0.0, sumsq = 0.0;
  std::int64_t observed = 0;
  for (int v = 0; v < s.nodes; ++v)
    for (int t = 0; t < s.steps; ++t) {
      const double x = m.values(v, t);
      if (x == 0.0) continue;
      sum += x;
      sumsq += x * x;
      ++observed;
    }
  const auto total = static_cast<double>(s.nodes) * s.steps;
  s.observed_fraction = total > 0 ? static_cast<double>(observed) / total : 0.0;
  if (observed > 0) {
    const double mean = sum / static_cast<double>(observed);
    s.mean = mean;
    s.stddev = std::sqrt(std::max(0.0, sumsq / static_cast<double>(observed) - mean * mean));
  }
  return s;
}

}  // namespace stimpute
