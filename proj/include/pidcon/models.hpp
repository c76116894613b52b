#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pidcon/jet.hpp"
#include "pidcon/random.hpp"
#include "pidcon/tape.hpp"

namespace pidcon {

/// One boundary function observed at m points: coordinates (m x 2, already
/// normalized), values (m x c) and an optional one-hot side channel.
/// Rows form an unordered set.
struct BranchInput {
  Tensor points;
  Tensor values;
  int side = -1;
  std::size_t side_count = 0;
};

struct DconConfig {
  std::size_t q = 64;
  std::size_t layers = 3;
  std::size_t branch_depth = 3;
  std::size_t outputs = 1;
  std::size_t value_channels = 1;
  std::size_t side_channels = 0;

  std::size_t branch_features() const { return 2 + value_channels + side_channels; }

  void validate() const {
    if (q < 1) throw ValidationError("dcon: q must be >= 1");
    if (branch_depth < 1) throw ValidationError("dcon: branch_depth must be >= 1");
    if (outputs != 1 && outputs != 2) throw ValidationError("dcon: outputs must be 1 or 2");
  }
};

struct DeepOnetConfig {
  std::size_t q = 64;
  std::size_t depth = 3;
  std::size_t m_fixed = 100;
  std::size_t value_channels = 1;
  std::size_t outputs = 1;

  std::size_t branch_inputs() const { return m_fixed * value_channels; }

  void validate() const {
    if (q < 1 || depth < 1 || m_fixed < 1) throw ValidationError("deeponet: q, depth and m_fixed must be >= 1");
    if (outputs != 1 && outputs != 2) throw ValidationError("deeponet: outputs must be 1 or 2");
    if (q % outputs != 0) throw ValidationError("deeponet: q must split evenly across outputs");
  }
};

namespace detail {

// Uniform Glorot initialization, stored input-major (fan_in x fan_out).
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(Shape{fan_in, fan_out});
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

inline void add_dense(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      CounterRng& rng) {
  store.add(prefix + ".W", glorot(in, out, rng));
  store.add(prefix + ".b", Tensor(Shape{1, out}));
}

inline Var dense(Tape& tape, ParamStore& store, const std::string& prefix, const Var& x) {
  return add(matmul(x, tape.param(store, prefix + ".W")), tape.param(store, prefix + ".b"));
}

inline Jet2 dense_jet(Tape& tape, ParamStore& store, const std::string& prefix, const Jet2& j) {
  return jet_affine(tape.param(store, prefix + ".W"), tape.param(store, prefix + ".b"), j);
}

}  // namespace detail

/// Stacks every row of every input into one feature matrix
/// [x, y, values..., one-hot side...].
inline Tensor branch_feature_matrix(const DconConfig& cfg, std::span<const BranchInput> inputs) {
  if (inputs.empty()) throw ValidationError("branch_embed: empty input list");
  std::size_t rows = 0;
  for (const auto& in : inputs) {
    if (in.points.rows() < 1 || in.points.cols() != 2) {
      throw ShapeError("branch_embed: points must be m x 2 with m >= 1, got " + shape_str(in.points.shape()));
    }
    if (in.values.rows() != in.points.rows() || in.values.cols() != cfg.value_channels) {
      throw ShapeError("branch_embed: values " + shape_str(in.values.shape()) + " do not match points " +
                       shape_str(in.points.shape()) + " with " + std::to_string(cfg.value_channels) + " channels");
    }
    if (in.side >= 0 && static_cast<std::size_t>(in.side) >= cfg.side_channels) {
      throw ShapeError("branch_embed: side tag out of range");
    }
    rows += in.points.rows();
  }
  const std::size_t f = cfg.branch_features();
  Tensor x(Shape{rows, f});
  std::size_t r = 0;
  for (const auto& in : inputs) {
    for (std::size_t i = 0; i < in.points.rows(); ++i, ++r) {
      x(r, 0) = in.points(i, 0);
      x(r, 1) = in.points(i, 1);
      for (std::size_t c = 0; c < cfg.value_channels; ++c) x(r, 2 + c) = in.values(i, c);
      if (in.side >= 0) x(r, 2 + cfg.value_channels + static_cast<std::size_t>(in.side)) = 1.0;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// DCON
// ---------------------------------------------------------------------------

/// Parameters: branch.k.{W,b} (per-point MLP), trunk.{W,b}, op.j.{W,b} for
/// j = 1..L, and head.k (1 x q) reduction weights when outputs == 2.
inline void init_dcon(const DconConfig& cfg, ParamStore& store, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(derive_seed(seed, {0xDC0}));
  std::size_t in = cfg.branch_features();
  for (std::size_t k = 0; k < cfg.branch_depth; ++k) {
    detail::add_dense(store, "branch." + std::to_string(k), in, cfg.q, rng);
    in = cfg.q;
  }
  detail::add_dense(store, "trunk", 2, cfg.q, rng);
  for (std::size_t j = 1; j <= cfg.layers; ++j) detail::add_dense(store, "op." + std::to_string(j), cfg.q, cfg.q, rng);
  if (cfg.outputs > 1) {
    for (std::size_t k = 0; k < cfg.outputs; ++k) store.add("head." + std::to_string(k), Tensor::ones(Shape{1, cfg.q}));
  }
}

/// Per-point MLP (tanh between layers, linear last layer) over all rows of
/// all inputs, then a columnwise max over the joint row set. The result is a
/// 1 x q row whatever the number of points.
inline Var branch_embed(Tape& tape, ParamStore& store, const DconConfig& cfg, std::span<const BranchInput> inputs) {
  Var h = tape.constant(branch_feature_matrix(cfg, inputs));
  for (std::size_t k = 0; k < cfg.branch_depth; ++k) {
    h = detail::dense(tape, store, "branch." + std::to_string(k), h);
    if (k + 1 < cfg.branch_depth) h = tanh(h);
  }
  return maxpool(h, 0);
}

/// t = tanh(x W_t + B_t); v_1 = b * (t W_1 + B_1); v_j = b * (tanh(v_{j-1}) W_j + B_j);
/// output = sum over features of v_L (b * t when L = 0). With two outputs each
/// channel reduces with its own head weights.
inline std::vector<Jet2> dcon_forward_jet(Tape& tape, ParamStore& store, const DconConfig& cfg, const Var& b,
                                          const Jet2& x) {
  if (b.value().rows() != 1 || b.value().cols() != cfg.q) {
    throw ShapeError("dcon_forward: embedding must be 1 x " + std::to_string(cfg.q) + ", got " +
                     shape_str(b.value().shape()));
  }
  if (x.val.value().cols() != 2) throw ShapeError("dcon_forward: coordinates must be n x 2");
  const Jet2 t = jet_tanh(detail::dense_jet(tape, store, "trunk", x));
  Jet2 v = cfg.layers == 0 ? jet_hadamard_const(b, t) : t;
  for (std::size_t j = 1; j <= cfg.layers; ++j) {
    const Jet2 in = j == 1 ? v : jet_tanh(v);
    v = jet_hadamard_const(b, detail::dense_jet(tape, store, "op." + std::to_string(j), in));
  }
  if (cfg.outputs == 1) return {jet_reduce_sum(v)};
  std::vector<Jet2> out;
  for (std::size_t k = 0; k < cfg.outputs; ++k) {
    out.push_back(jet_reduce_sum(jet_hadamard_const(tape.param(store, "head." + std::to_string(k)), v)));
  }
  return out;
}

/// Plain forward at normalized coordinates (n x 2); one n x 1 Var per output.
inline std::vector<Var> dcon_forward(Tape& tape, ParamStore& store, const DconConfig& cfg, const Var& b,
                                     const Tensor& coords) {
  std::vector<Var> out;
  for (const auto& j : dcon_forward_jet(tape, store, cfg, b, jet_seed(tape, coords, 0))) out.push_back(j.val);
  return out;
}

// ---------------------------------------------------------------------------
// DeepONet
// ---------------------------------------------------------------------------

/// Parameters: branch.k.{W,b} hidden tanh layers plus branch.out.{W,b};
/// trunk.k.{W,b} tanh layers.
inline void init_deeponet(const DeepOnetConfig& cfg, ParamStore& store, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(derive_seed(seed, {0xD0E}));
  std::size_t in = cfg.branch_inputs();
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    detail::add_dense(store, "branch." + std::to_string(k), in, cfg.q, rng);
    in = cfg.q;
  }
  detail::add_dense(store, "branch.out", cfg.q, cfg.q, rng);
  in = 2;
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    detail::add_dense(store, "trunk." + std::to_string(k), in, cfg.q, rng);
    in = cfg.q;
  }
}

/// Branch MLP over a fixed-length vector of boundary values (1 x m_fixed*c).
inline Var deeponet_embed_values(Tape& tape, ParamStore& store, const DeepOnetConfig& cfg, const Tensor& g_values) {
  if (g_values.size() != cfg.branch_inputs()) {
    throw ShapeError("deeponet: branch expects exactly " + std::to_string(cfg.branch_inputs()) +
                     " boundary values (m_fixed=" + std::to_string(cfg.m_fixed) + "), got " +
                     std::to_string(g_values.size()));
  }
  Var h = tape.constant(g_values.reshaped(Shape{1, g_values.size()}));
  for (std::size_t k = 0; k < cfg.depth; ++k) h = tanh(detail::dense(tape, store, "branch." + std::to_string(k), h));
  return detail::dense(tape, store, "branch.out", h);
}

/// Concatenates the value rows of all inputs, in order; the total number of
/// points must equal m_fixed.
inline Var deeponet_embed(Tape& tape, ParamStore& store, const DeepOnetConfig& cfg,
                          std::span<const BranchInput> inputs) {
  if (inputs.empty()) throw ValidationError("deeponet: empty input list");
  std::vector<double> flat;
  std::size_t m = 0;
  for (const auto& in : inputs) {
    if (in.values.cols() != cfg.value_channels) throw ShapeError("deeponet: value channel mismatch");
    m += in.values.rows();
    flat.insert(flat.end(), in.values.data().begin(), in.values.data().end());
  }
  if (m != cfg.m_fixed) {
    throw ShapeError("deeponet: discretization-specific branch needs m = " + std::to_string(cfg.m_fixed) +
                     " boundary points, got " + std::to_string(m));
  }
  return deeponet_embed_values(tape, store, cfg, Tensor::vector(std::move(flat)));
}

inline std::vector<Jet2> deeponet_forward_jet(Tape& tape, ParamStore& store, const DeepOnetConfig& cfg, const Var& b,
                                              const Jet2& x) {
  if (b.value().rows() != 1 || b.value().cols() != cfg.q) throw ShapeError("deeponet: embedding must be 1 x q");
  Jet2 t = x;
  for (std::size_t k = 0; k < cfg.depth; ++k) t = jet_tanh(detail::dense_jet(tape, store, "trunk." + std::to_string(k), t));
  if (cfg.outputs == 1) return {jet_reduce_sum(jet_hadamard_const(b, t))};
  const std::size_t w = cfg.q / cfg.outputs;
  std::vector<Jet2> out;
  for (std::size_t k = 0; k < cfg.outputs; ++k) {
    const Var bk = slice(b, 1, k * w, (k + 1) * w);
    out.push_back(jet_reduce_sum(jet_hadamard_const(bk, jet_slice(t, k * w, (k + 1) * w))));
  }
  return out;
}

inline std::vector<Var> deeponet_forward(Tape& tape, ParamStore& store, const DeepOnetConfig& cfg,
                                         const Tensor& g_values, const Tensor& coords) {
  const Var b = deeponet_embed_values(tape, store, cfg, g_values);
  std::vector<Var> out;
  for (const auto& j : deeponet_forward_jet(tape, store, cfg, b, jet_seed(tape, coords, 0))) out.push_back(j.val);
  return out;
}

// ---------------------------------------------------------------------------
// Common interface for training and evaluation
// ---------------------------------------------------------------------------

class OperatorModel {
 public:
  virtual ~OperatorModel() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t outputs() const = 0;
  virtual void init(ParamStore& store, std::uint64_t seed) const = 0;
  virtual Var embed(Tape& tape, ParamStore& store, std::span<const BranchInput> inputs) const = 0;
  virtual std::vector<Jet2> forward_jet(Tape& tape, ParamStore& store, const Var& b, const Jet2& x) const = 0;

  std::vector<Var> forward(Tape& tape, ParamStore& store, const Var& b, const Tensor& coords) const {
    std::vector<Var> out;
    for (const auto& j : forward_jet(tape, store, b, jet_seed(tape, coords, 0))) out.push_back(j.val);
    return out;
  }

  /// Numeric prediction (n x outputs) at normalized coordinates, evaluated in
  /// chunks of `chunk` points on throwaway tapes.
  Tensor predict(ParamStore& store, std::span<const BranchInput> inputs, const Tensor& coords,
                 std::size_t chunk = 4096) const {
    const std::size_t n = coords.rows(), c = outputs();
    Tensor out(Shape{n, c});
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t stop = std::min(n, start + chunk);
      Tape tape;
      const Var b = embed(tape, store, inputs);
      Tensor part(Shape{stop - start, 2});
      for (std::size_t i = start; i < stop; ++i) {
        part(i - start, 0) = coords(i, 0);
        part(i - start, 1) = coords(i, 1);
      }
      const auto ys = forward(tape, store, b, part);
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = start; i < stop; ++i) out(i, k) = ys[k].value()[i - start];
    }
    return out;
  }
};

class DconModel final : public OperatorModel {
 public:
  explicit DconModel(DconConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  const DconConfig& config() const { return cfg_; }
  std::string kind() const override { return "dcon"; }
  std::size_t outputs() const override { return cfg_.outputs; }
  void init(ParamStore& store, std::uint64_t seed) const override { init_dcon(cfg_, store, seed); }
  Var embed(Tape& tape, ParamStore& store, std::span<const BranchInput> inputs) const override {
    return branch_embed(tape, store, cfg_, inputs);
  }
  std::vector<Jet2> forward_jet(Tape& tape, ParamStore& store, const Var& b, const Jet2& x) const override {
    return dcon_forward_jet(tape, store, cfg_, b, x);
  }

 private:
  DconConfig cfg_;
};

class DeepOnetModel final : public OperatorModel {
 public:
  explicit DeepOnetModel(DeepOnetConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  const DeepOnetConfig& config() const { return cfg_; }
  std::string kind() const override { return "deeponet"; }
  std::size_t outputs() const override { return cfg_.outputs; }
  void init(ParamStore& store, std::uint64_t seed) const override { init_deeponet(cfg_, store, seed); }
  Var embed(Tape& tape, ParamStore& store, std::span<const BranchInput> inputs) const override {
    return deeponet_embed(tape, store, cfg_, inputs);
  }
  std::vector<Jet2> forward_jet(Tape& tape, ParamStore& store, const Var& b, const Jet2& x) const override {
    return deeponet_forward_jet(tape, store, cfg_, b, x);
  }

 private:
  DeepOnetConfig cfg_;
};

}  // namespace pidcon
