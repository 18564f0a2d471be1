#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stimpute/autodiff.hpp"
#include "stimpute/errors.hpp"
#include "stimpute/fsutil.hpp"
#include "stimpute/rng.hpp"

namespace stimpute {

// Architecture hyperparameters. The ablation switches reproduce the model
// variants used for component analysis: dropping the recurrent layer or the
// spatial convolution substitutes a linear layer, dropping structure
// estimation falls back to the fixed transition matrices.
struct ModelConfig {
  int nodes = 0;            // N
  int window = 72;          // T, time steps per imputation window
  int blocks = 2;           // S
  int diffusion_steps = 2;  // K
  int hidden = 128;         // d_h, recurrent state width
  int out_dim = 64;         // d_o, shared BLSTM/DGCN output width
  int gse_hidden = 32;      // feed-forward width inside structure estimation
  bool use_blstm = true;
  bool use_gse = true;
  bool use_dgcn = true;

  void validate() const {
    if (nodes < 1 || window < 1 || blocks < 1 || diffusion_steps < 1 ||
        hidden < 1 || out_dim < 1 || gse_hidden < 1)
      throw std::invalid_argument("model config fields must all be >= 1");
  }

  bool gse_active() const { return use_gse && use_dgcn; }
};

// Named, ordered collection of trainable arrays. Order is the creation
// order, which init_params fixes, so optimizer state and serialized records
// line up across runs.
struct ParameterSet {
  struct Entry {
    std::string name;
    Eigen::MatrixXd value;
  };

  std::vector<Entry> entries;
  std::map<std::string, int> index;

  int add(const std::string& name, Eigen::MatrixXd value) {
    if (index.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    entries.push_back(Entry{name, std::move(value)});
    index.emplace(name, static_cast<int>(entries.size()) - 1);
    return static_cast<int>(entries.size()) - 1;
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  const Eigen::MatrixXd& at(const std::string& name) const {
    const auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter " + name);
    return entries[static_cast<std::size_t>(it->second)].value;
  }

  Eigen::MatrixXd& at(const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter " + name);
    return entries[static_cast<std::size_t>(it->second)].value;
  }

  std::size_t count() const { return entries.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries)
      if (!e.value.allFinite()) return false;
    return true;
  }

  bool operator==(const ParameterSet& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name != other.entries[i].name) return false;
      if (entries[i].value.rows() != other.entries[i].value.rows() ||
          entries[i].value.cols() != other.entries[i].value.cols())
        return false;
      if (std::memcmp(entries[i].value.data(), other.entries[i].value.data(),
                      sizeof(double) * static_cast<std::size_t>(entries[i].value.size())) != 0)
        return false;
    }
    return true;
  }
};

namespace detail {

inline Eigen::MatrixXd uniform_fan_in(int rows, int cols, int fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
  return m;
}

}  // namespace detail

// Fresh parameters: weights uniform with scale 1/sqrt(fan-in), biases zero,
// layer-norm scale one and shift zero. Deterministic per seed.
inline ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterSet p;
  const int dh = cfg.hidden, dout = cfg.out_dim, n = cfg.nodes;

  const auto weight = [&](const std::string& name, int rows, int cols) {
    p.add(name, detail::uniform_fan_in(rows, cols, rows, rng));
  };
  const auto bias = [&](const std::string& name, int cols) {
    p.add(name, Eigen::MatrixXd::Zero(1, cols));
  };

  for (int s = 0; s < cfg.blocks; ++s) {
    const std::string b = "b" + std::to_string(s) + ".";
    const int d_in = s == 0 ? 1 : dout;

    if (cfg.use_blstm) {
      for (const char* dir : {"fw", "bw"}) {
        const std::string r = b + "blstm." + dir + ".";
        weight(r + "Wx", d_in, 4 * dh);
        weight(r + "Wh", dh, 4 * dh);
        bias(r + "b", 4 * dh);
      }
      weight(b + "blstm.out.W", 2 * dh, dout);
      bias(b + "blstm.out.b", dout);
    } else {
      weight(b + "temporal.W", d_in, dout);
      bias(b + "temporal.b", dout);
    }

    if (cfg.gse_active()) {
      for (const char* dir : {"f", "b"}) {
        const std::string r = b + "gse." + std::string(dir) + ".";
        weight(r + "W1", dout, cfg.gse_hidden);
        bias(r + "b1", cfg.gse_hidden);
        weight(r + "W2", cfg.gse_hidden, n);
        bias(r + "b2", n);
        weight(r + "g1", 1, 1);
        weight(r + "g2", 1, 1);
        bias(r + "gb", 1);
      }
    }

    if (cfg.use_dgcn) {
      for (int k = 1; k <= cfg.diffusion_steps; ++k) {
        weight(b + "dgcn.f.theta" + std::to_string(k), dout, dout);
        weight(b + "dgcn.b.theta" + std::to_string(k), dout, dout);
      }
    } else {
      weight(b + "spatial.W", dout, dout);
      bias(b + "spatial.b", dout);
    }

    p.add(b + "ln.gamma", Eigen::MatrixXd::Ones(1, dout));
    bias(b + "ln.beta", dout);
  }

  weight("head.W1", dout, dout);
  bias("head.b1", dout);
  weight("head.W2", dout, 1);
  bias("head.b2", 1);
  return p;
}

// Lazily binds parameter entries as leaves on one tape, remembering which
// entry each leaf came from so gradients can be read back in entry order.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParameterSet& params)
      : tape_(&tape), params_(&params),
        vars_(params.entries.size()) {}

  ad::Var operator()(const std::string& name) {
    const auto it = params_->index.find(name);
    if (it == params_->index.end())
      throw std::invalid_argument("unknown parameter " + name);
    auto& slot = vars_[static_cast<std::size_t>(it->second)];
    if (!slot.valid())
      slot = tape_->leaf(params_->entries[static_cast<std::size_t>(it->second)].value);
    return slot;
  }

  // Gradients per entry (zeros where an entry never joined the graph).
  std::vector<Eigen::MatrixXd> gradients() const {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(params_->entries.size());
    for (std::size_t i = 0; i < params_->entries.size(); ++i) {
      if (vars_[i].valid()) {
        out.push_back(tape_->grad(vars_[i]));
      } else {
        const auto& v = params_->entries[i].value;
        out.push_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
      }
    }
    return out;
  }

 private:
  ad::Tape* tape_;
  const ParameterSet* params_;
  std::vector<ad::Var> vars_;
};

// A trained model bundles architecture, weights and the input
// normalization statistics captured from the training slice.
struct TrainedModel {
  ModelConfig config;
  ParameterSet params;
  double norm_mean = 0.0;
  double norm_std = 1.0;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& at) {
  if (at + 8 > in.size()) throw DataError("truncated checkpoint");
  std::uint64_t v;
  std::memcpy(&v, in.data() + at, 8);
  at += 8;
  return v;
}

}  // namespace detail

// Checkpoint archive: a text manifest with the format version and config
// fields, then each array as a named record of shape plus row-major
// doubles. Raw byte payloads make the round-trip bitwise.
inline void save_checkpoint(const TrainedModel& model, const std::string& path) {
  std::ostringstream manifest;
  manifest << "format = 1\n"
           << "nodes = " << model.config.nodes << "\n"
           << "window = " << model.config.window << "\n"
           << "blocks = " << model.config.blocks << "\n"
           << "diffusion_steps = " << model.config.diffusion_steps << "\n"
           << "hidden = " << model.config.hidden << "\n"
           << "out_dim = " << model.config.out_dim << "\n"
           << "gse_hidden = " << model.config.gse_hidden << "\n"
           << "use_blstm = " << (model.config.use_blstm ? 1 : 0) << "\n"
           << "use_gse = " << (model.config.use_gse ? 1 : 0) << "\n"
           << "use_dgcn = " << (model.config.use_dgcn ? 1 : 0) << "\n";

  std::string out = "STIMODEL";
  const std::string mtext = manifest.str();
  detail::put_u64(out, mtext.size());
  out += mtext;

  // Normalization statistics ride along as two extra records.
  detail::put_u64(out, model.params.entries.size() + 2);
  const auto record = [&out](const std::string& name, const Eigen::MatrixXd& m) {
    detail::put_u64(out, name.size());
    out += name;
    detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        char buf[8];
        const double v = m(i, j);
        std::memcpy(buf, &v, 8);
        out.append(buf, 8);
      }
  };
  record("norm.mean", Eigen::MatrixXd::Constant(1, 1, model.norm_mean));
  record("norm.std", Eigen::MatrixXd::Constant(1, 1, model.norm_std));
  for (const auto& e : model.params.entries) record(e.name, e.value);

  atomic_write_file(path, out);
}

inline TrainedModel load_checkpoint(const std::string& path) {
  const std::string in = read_file(path);
  if (in.size() < 8 || in.compare(0, 8, "STIMODEL") != 0)
    throw DataError(path + ": not a model checkpoint");
  std::size_t at = 8;
  const std::uint64_t mlen = detail::get_u64(in, at);
  if (at + mlen > in.size()) throw DataError(path + ": truncated manifest");
  const std::string mtext = in.substr(at, mlen);
  at += mlen;

  std::map<std::string, std::string> kv;
  {
    std::istringstream ss(mtext);
    std::string line;
    while (std::getline(ss, line)) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  const auto geti = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw DataError(path + ": manifest lacks " + k);
    return std::stoi(it->second);
  };
  if (geti("format") != 1) throw DataError(path + ": unsupported checkpoint format");

  TrainedModel model;
  model.config.nodes = geti("nodes");
  model.config.window = geti("window");
  model.config.blocks = geti("blocks");
  model.config.diffusion_steps = geti("diffusion_steps");
  model.config.hidden = geti("hidden");
  model.config.out_dim = geti("out_dim");
  model.config.gse_hidden = geti("gse_hidden");
  model.config.use_blstm = geti("use_blstm") != 0;
  model.config.use_gse = geti("use_gse") != 0;
  model.config.use_dgcn = geti("use_dgcn") != 0;
  model.config.validate();

  const std::uint64_t records = detail::get_u64(in, at);
  for (std::uint64_t r = 0; r < records; ++r) {
    const std::uint64_t nlen = detail::get_u64(in, at);
    if (at + nlen > in.size()) throw DataError(path + ": truncated record name");
    const std::string name = in.substr(at, nlen);
    at += nlen;
    const auto rows = static_cast<Eigen::Index>(detail::get_u64(in, at));
    const auto cols = static_cast<Eigen::Index>(detail::get_u64(in, at));
    if (rows < 0 || cols < 0 ||
        at + 8 * static_cast<std::size_t>(rows * cols) > in.size())
      throw DataError(path + ": truncated record " + name);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        double v;
        std::memcpy(&v, in.data() + at, 8);
        at += 8;
        m(i, j) = v;
      }
    if (name == "norm.mean") {
      model.norm_mean = m(0, 0);
    } else if (name == "norm.std") {
      model.norm_std = m(0, 0);
    } else {
      model.params.add(name, std::move(m));
    }
  }
  return model;
}

}  // namespace stimpute
