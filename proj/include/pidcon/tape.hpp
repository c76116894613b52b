#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pidcon/tensor.hpp"

namespace pidcon {

/// Trainable parameters by name, each with its gradient slot and Adam moments.
/// Iteration order is insertion order, which keeps every reduction over
/// parameters deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
  };

  std::size_t add(std::string name, Tensor value) {
    if (index_.contains(name)) throw ValidationError("param store: duplicate parameter '" + name + "'");
    const std::size_t id = entries_.size();
    index_.emplace(name, id);
    Tensor zeros(value.shape());
    entries_.push_back(Entry{std::move(name), std::move(value), zeros, zeros, zeros});
    return id;
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValidationError("param store: unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  Entry& at(std::string_view name) { return entries_[index_of(name)]; }
  const Entry& at(std::string_view name) const { return entries_[index_of(name)]; }
  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) std::fill(e.grad.data().begin(), e.grad.data().end(), 0.0);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Primitive {
  Constant,
  Param,
  Matmul,
  Add,
  Sub,
  Hadamard,
  Tanh,
  MaxPool,
  Sum,
  Mean,
  Square,
  Scale,
  Concat,
  Slice,
};

inline std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Constant: return "constant";
    case Primitive::Param: return "param";
    case Primitive::Matmul: return "matmul";
    case Primitive::Add: return "add";
    case Primitive::Sub: return "sub";
    case Primitive::Hadamard: return "hadamard";
    case Primitive::Tanh: return "tanh";
    case Primitive::MaxPool: return "maxpool-axis";
    case Primitive::Sum: return "sum";
    case Primitive::Mean: return "mean";
    case Primitive::Square: return "square";
    case Primitive::Scale: return "scale";
    case Primitive::Concat: return "concat";
    case Primitive::Slice: return "slice";
  }
  return "?";
}

using NodeId = std::size_t;

// Per-op attributes. Only the fields relevant to an op are meaningful.
struct OpAttrs {
  int axis = -1;
  double alpha = 1.0;
  double beta = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> argmax;
  std::size_t param = std::numeric_limits<std::size_t>::max();
};

class Tape;

/// Handle to a node on a tape. A default-constructed Var is "absent"; the jet
/// code uses that to mean an identically-zero component.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  explicit operator bool() const noexcept { return valid(); }
  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

namespace detail {

enum class Bcast { None, Scalar, Row };

struct BinaryLayout {
  Shape out;
  Bcast a = Bcast::None;
  Bcast b = Bcast::None;
  std::size_t cols = 1;
};

inline BinaryLayout binary_layout(std::string_view op, const Tensor& a, const Tensor& b) {
  BinaryLayout l;
  if (a.size() == b.size() && a.rows() == b.rows() && a.cols() == b.cols()) {
    l.out = a.shape();
  } else if (b.size() == 1) {
    l.out = a.shape();
    l.b = Bcast::Scalar;
  } else if (a.size() == 1) {
    l.out = b.shape();
    l.a = Bcast::Scalar;
  } else if (a.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
    l.out = a.shape();
    l.b = Bcast::Row;
  } else if (b.rank() == 2 && a.rows() == 1 && a.cols() == b.cols()) {
    l.out = b.shape();
    l.a = Bcast::Row;
  } else {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  l.cols = l.out.size() == 2 ? l.out[1] : shape_size(l.out);
  return l;
}

inline std::size_t bindex(Bcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Bcast::None: return i;
    case Bcast::Scalar: return 0;
    case Bcast::Row: return i % cols;
  }
  return i;
}

template <class F>
Tensor binary_apply(const BinaryLayout& l, const Tensor& a, const Tensor& b, F f) {
  Tensor out(l.out);
  const std::size_t n = out.size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  if (l.a == Bcast::None && l.b == Bcast::None) {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else if (l.a == Bcast::None && l.b == Bcast::Row) {
    const std::size_t c = l.cols;
    for (std::size_t i = 0; i < n; i += c)
      for (std::size_t j = 0; j < c; ++j) po[i + j] = f(pa[i + j], pb[j]);
  } else {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[bindex(l.a, i, l.cols)], pb[bindex(l.b, i, l.cols)]);
  }
  return out;
}

// acc (shape of the operand) += reduction of g (shape of the output) over the
// broadcast axes, each term multiplied by w(i).
template <class W>
void reduce_into(Bcast mode, std::size_t cols, const Tensor& g, Tensor& acc, W w) {
  const std::size_t n = g.size();
  const double* pg = g.data().data();
  double* pa = acc.data().data();
  switch (mode) {
    case Bcast::None:
      for (std::size_t i = 0; i < n; ++i) pa[i] += pg[i] * w(i);
      break;
    case Bcast::Scalar: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += pg[i] * w(i);
      pa[0] += s;
      break;
    }
    case Bcast::Row:
      for (std::size_t i = 0; i < n; i += cols)
        for (std::size_t j = 0; j < cols; ++j) pa[j] += pg[i + j] * w(i + j);
      break;
  }
}

}  // namespace detail

/// Define-by-run recording tape for reverse-mode differentiation.
///
/// Every primitive computes its value eagerly and appends a node; node ids are
/// therefore topologically ordered. `backward` walks the nodes in strict
/// reverse order and adds d(loss)/d(param) into the gradient slots of the bound
/// ParamStore. A tape is single-owner: build it, run one backward, drop it.
class Tape {
 public:
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  bool check_finite() const noexcept { return check_finite_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value) { return Var(this, record(Primitive::Constant, {}, std::move(value))); }

  /// Leaf bound to a store entry. Repeated requests for the same name return
  /// the same node, so a weight shared by several jet channels accumulates a
  /// single adjoint.
  Var param(ParamStore& store, std::string_view name) {
    if (store_ != nullptr && store_ != &store) throw ValidationError("tape: bound to a different param store");
    store_ = &store;
    const std::size_t idx = store.index_of(name);
    if (auto it = param_nodes_.find(idx); it != param_nodes_.end()) return Var(this, it->second);
    OpAttrs attrs;
    attrs.param = idx;
    const NodeId id = record(Primitive::Param, {}, store.entry(idx).value, std::move(attrs));
    param_nodes_.emplace(idx, id);
    return Var(this, id);
  }

  NodeId record(Primitive op, std::vector<NodeId> inputs, Tensor out, OpAttrs attrs = {}) {
    bool needs_grad = op == Primitive::Param;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) {
        throw ValidationError("tape: input node " + std::to_string(in) + " does not exist for " +
                              std::string(primitive_name(op)));
      }
      needs_grad = needs_grad || nodes_[in].requires_grad;
    }
    if (check_finite_ && !out.all_finite()) {
      throw NumericalError("tape: non-finite value produced by " + std::string(primitive_name(op)) + " " +
                           shape_str(out.shape()));
    }
    nodes_.push_back(Node{op, std::move(inputs), std::move(out), std::move(attrs), needs_grad});
    return nodes_.size() - 1;
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  Primitive op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  /// Adjoint of a node after backward; an all-zero tensor if the node did not
  /// influence the loss.
  Tensor adjoint(NodeId id) const {
    if (id < adjoints_.size() && !adjoints_[id].empty()) return adjoints_[id];
    return Tensor(nodes_.at(id).value.shape());
  }

  void backward(Var loss);

 private:
  struct Node {
    Primitive op;
    std::vector<NodeId> inputs;
    Tensor value;
    OpAttrs attrs;
    bool requires_grad;
  };

  Tensor& adj(NodeId id) {
    if (adjoints_[id].empty()) adjoints_[id] = Tensor(nodes_[id].value.shape());
    return adjoints_[id];
  }
  bool wants(NodeId id) const { return nodes_[id].requires_grad; }
  void propagate(NodeId id);

  // A deque keeps references from Var::value() valid while the tape grows.
  std::deque<Node> nodes_;
  std::vector<Tensor> adjoints_;
  ParamStore* store_ = nullptr;
  std::unordered_map<std::size_t, NodeId> param_nodes_;
  bool check_finite_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace detail {
inline Tape& same_tape(std::string_view op, const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw ValidationError(std::string(op) + ": absent operand");
  if (&a.tape() != &b.tape()) throw ValidationError(std::string(op) + ": operands on different tapes");
  return a.tape();
}
inline Tape& tape_of(std::string_view op, const Var& a) {
  if (!a.valid()) throw ValidationError(std::string(op) + ": absent operand");
  return a.tape();
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  return Var(&t, t.record(Primitive::Matmul, {a.id(), b.id()}, kernels::matmul(av, bv)));
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape("add", a, b);
  const auto l = detail::binary_layout("add", a.value(), b.value());
  return Var(&t, t.record(Primitive::Add, {a.id(), b.id()},
                          detail::binary_apply(l, a.value(), b.value(), [](double x, double y) { return x + y; })));
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape("sub", a, b);
  const auto l = detail::binary_layout("sub", a.value(), b.value());
  return Var(&t, t.record(Primitive::Sub, {a.id(), b.id()},
                          detail::binary_apply(l, a.value(), b.value(), [](double x, double y) { return x - y; })));
}

inline Var hadamard(const Var& a, const Var& b) {
  Tape& t = detail::same_tape("hadamard", a, b);
  const auto l = detail::binary_layout("hadamard", a.value(), b.value());
  return Var(&t, t.record(Primitive::Hadamard, {a.id(), b.id()},
                          detail::binary_apply(l, a.value(), b.value(), [](double x, double y) { return x * y; })));
}

inline Var tanh(const Var& a) {
  Tape& t = detail::tape_of("tanh", a);
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = std::tanh(in[i]);
  return Var(&t, t.record(Primitive::Tanh, {a.id()}, std::move(out)));
}

/// Max over rows (axis 0, giving 1 x cols) or over columns (axis 1, giving
/// rows x 1). Ties go to the lowest index.
inline Var maxpool(const Var& a, int axis = 0) {
  Tape& t = detail::tape_of("maxpool-axis", a);
  const Tensor& v = a.value();
  const std::size_t r = v.rows(), c = v.cols();
  if (r == 0 || c == 0) throw ShapeError("maxpool-axis: empty input " + shape_str(v.shape()));
  OpAttrs attrs;
  attrs.axis = axis;
  Tensor out;
  if (axis == 0) {
    out = Tensor(Shape{1, c});
    attrs.argmax.assign(c, 0);
    for (std::size_t j = 0; j < c; ++j) out[j] = v[j];
    for (std::size_t i = 1; i < r; ++i) {
      const double* row = v.data().data() + i * c;
      for (std::size_t j = 0; j < c; ++j) {
        if (row[j] > out[j]) {
          out[j] = row[j];
          attrs.argmax[j] = i;
        }
      }
    }
  } else if (axis == 1) {
    out = Tensor(Shape{r, 1});
    attrs.argmax.assign(r, 0);
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = v.data().data() + i * c;
      double best = row[0];
      for (std::size_t j = 1; j < c; ++j) {
        if (row[j] > best) {
          best = row[j];
          attrs.argmax[i] = j;
        }
      }
      out[i] = best;
    }
  } else {
    throw ShapeError("maxpool-axis: axis must be 0 or 1");
  }
  return Var(&t, t.record(Primitive::MaxPool, {a.id()}, std::move(out), std::move(attrs)));
}

/// Sum of all entries (axis -1, scalar), down rows (axis 0, 1 x cols) or
/// across columns (axis 1, rows x 1).
inline Var sum(const Var& a, int axis = -1) {
  Tape& t = detail::tape_of("sum", a);
  const Tensor& v = a.value();
  const std::size_t r = v.rows(), c = v.cols();
  Tensor out;
  if (axis == -1) {
    double s = 0.0;
    for (double x : v.data()) s += x;
    out = Tensor::scalar(s);
  } else if (axis == 0) {
    out = Tensor(Shape{1, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  } else if (axis == 1) {
    out = Tensor(Shape{r, 1});
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += v[i * c + j];
      out[i] = s;
    }
  } else {
    throw ShapeError("sum: axis must be -1, 0 or 1");
  }
  OpAttrs attrs;
  attrs.axis = axis;
  return Var(&t, t.record(Primitive::Sum, {a.id()}, std::move(out), std::move(attrs)));
}

inline Var mean(const Var& a) {
  Tape& t = detail::tape_of("mean", a);
  const Tensor& v = a.value();
  if (v.size() == 0) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double x : v.data()) s += x;
  return Var(&t, t.record(Primitive::Mean, {a.id()}, Tensor::scalar(s / static_cast<double>(v.size()))));
}

inline Var square(const Var& a) {
  Tape& t = detail::tape_of("square", a);
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * in[i];
  return Var(&t, t.record(Primitive::Square, {a.id()}, std::move(out)));
}

/// alpha * a + beta, elementwise.
inline Var scale(const Var& a, double alpha, double beta = 0.0) {
  Tape& t = detail::tape_of("scale", a);
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = alpha * in[i] + beta;
  OpAttrs attrs;
  attrs.alpha = alpha;
  attrs.beta = beta;
  return Var(&t, t.record(Primitive::Scale, {a.id()}, std::move(out), std::move(attrs)));
}

/// Concatenate rank-2 tensors along rows (axis 0) or columns (axis 1).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = detail::tape_of("concat", parts.front());
  std::vector<NodeId> ids;
  std::size_t r = parts.front().value().rows(), c = parts.front().value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&detail::tape_of("concat", p) != &t) throw ValidationError("concat: operands on different tapes");
    const Tensor& v = p.value();
    if (axis == 0 ? v.cols() != c : v.rows() != r) {
      throw ShapeError("concat: shape " + shape_str(v.shape()) + " does not conform on axis " + std::to_string(axis));
    }
    total += axis == 0 ? v.rows() : v.cols();
    ids.push_back(p.id());
  }
  Tensor out = axis == 0 ? Tensor(Shape{total, c}) : Tensor(Shape{r, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    if (axis == 0) {
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * c));
      offset += v.rows();
    } else {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) out[i * total + offset + j] = v[i * v.cols() + j];
      offset += v.cols();
    }
  }
  OpAttrs attrs;
  attrs.axis = axis;
  return Var(&t, t.record(Primitive::Concat, std::move(ids), std::move(out), std::move(attrs)));
}

/// Rows [begin, end) (axis 0) or columns [begin, end) (axis 1) of a rank-2 tensor.
inline Var slice(const Var& a, int axis, std::size_t begin, std::size_t end) {
  Tape& t = detail::tape_of("slice", a);
  const Tensor& v = a.value();
  const std::size_t r = v.rows(), c = v.cols();
  const std::size_t extent = axis == 0 ? r : c;
  if (begin >= end || end > extent || (axis != 0 && axis != 1)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(v.shape()));
  }
  Tensor out;
  if (axis == 0) {
    out = Tensor(Shape{end - begin, c});
    std::copy(v.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
              v.data().begin() + static_cast<std::ptrdiff_t>(end * c), out.data().begin());
  } else {
    const std::size_t w = end - begin;
    out = Tensor(Shape{r, w});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * w + j] = v[i * c + begin + j];
  }
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.begin = begin;
  attrs.end = end;
  return Var(&t, t.record(Primitive::Slice, {a.id()}, std::move(out), std::move(attrs)));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return hadamard(a, b); }

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

inline void Tape::propagate(NodeId id) {
  Node& node = nodes_[id];
  const Tensor& g = adjoints_[id];
  if (g.empty()) return;
  const auto& in = node.inputs;

  switch (node.op) {
    case Primitive::Constant:
    case Primitive::Param:
      break;

    case Primitive::Matmul: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& b = nodes_[in[1]].value;
      if (wants(in[0])) {
        const Tensor bt = kernels::transpose(b);
        kernels::matmul_acc(g.data(), bt.data(), adj(in[0]).data(), g.rows(), g.cols(), a.cols());
      }
      if (wants(in[1])) kernels::matmul_tn_acc(a, g, adj(in[1]));
      break;
    }

    case Primitive::Add:
    case Primitive::Sub:
    case Primitive::Hadamard: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& b = nodes_[in[1]].value;
      const auto l = detail::binary_layout(primitive_name(node.op), a, b);
      const double sb = node.op == Primitive::Sub ? -1.0 : 1.0;
      if (node.op == Primitive::Hadamard) {
        if (wants(in[0])) {
          detail::reduce_into(l.a, l.cols, g, adj(in[0]),
                              [&](std::size_t i) { return b[detail::bindex(l.b, i, l.cols)]; });
        }
        if (wants(in[1])) {
          detail::reduce_into(l.b, l.cols, g, adj(in[1]),
                              [&](std::size_t i) { return a[detail::bindex(l.a, i, l.cols)]; });
        }
      } else {
        if (wants(in[0])) detail::reduce_into(l.a, l.cols, g, adj(in[0]), [](std::size_t) { return 1.0; });
        if (wants(in[1])) detail::reduce_into(l.b, l.cols, g, adj(in[1]), [sb](std::size_t) { return sb; });
      }
      break;
    }

    case Primitive::Tanh: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      const Tensor& y = node.value;
      for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }

    case Primitive::MaxPool: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      const std::size_t c = nodes_[in[0]].value.cols();
      if (node.attrs.axis == 0) {
        for (std::size_t j = 0; j < node.attrs.argmax.size(); ++j) ga[node.attrs.argmax[j] * c + j] += g[j];
      } else {
        for (std::size_t i = 0; i < node.attrs.argmax.size(); ++i) ga[i * c + node.attrs.argmax[i]] += g[i];
      }
      break;
    }

    case Primitive::Sum: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      const std::size_t c = ga.cols();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        switch (node.attrs.axis) {
          case -1: ga[i] += g[0]; break;
          case 0: ga[i] += g[i % c]; break;
          default: ga[i] += g[i / c]; break;
        }
      }
      break;
    }

    case Primitive::Mean: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      const double w = g[0] / static_cast<double>(ga.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += w;
      break;
    }

    case Primitive::Square: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      const Tensor& x = nodes_[in[0]].value;
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
      break;
    }

    case Primitive::Scale: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.attrs.alpha * g[i];
      break;
    }

    case Primitive::Concat: {
      const std::size_t total_cols = g.cols();
      std::size_t offset = 0;
      for (NodeId part : in) {
        const Tensor& v = nodes_[part].value;
        if (wants(part)) {
          Tensor& gp = adj(part);
          if (node.attrs.axis == 0) {
            for (std::size_t i = 0; i < v.size(); ++i) gp[i] += g[offset * total_cols + i];
          } else {
            for (std::size_t i = 0; i < v.rows(); ++i)
              for (std::size_t j = 0; j < v.cols(); ++j) gp[i * v.cols() + j] += g[i * total_cols + offset + j];
          }
        }
        offset += node.attrs.axis == 0 ? v.rows() : v.cols();
      }
      break;
    }

    case Primitive::Slice: {
      if (!wants(in[0])) break;
      Tensor& ga = adj(in[0]);
      const std::size_t c = ga.cols();
      if (node.attrs.axis == 0) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[node.attrs.begin * c + i] += g[i];
      } else {
        const std::size_t w = node.attrs.end - node.attrs.begin;
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) ga[i * c + node.attrs.begin + j] += g[i * w + j];
      }
      break;
    }
  }
}

inline void Tape::backward(Var loss) {
  if (!loss.valid() || &loss.tape() != this) throw ValidationError("backward: loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.value().shape()));
  }
  adjoints_.assign(nodes_.size(), Tensor());
  adj(loss.id())[0] = 1.0;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    if (adjoints_[id].empty()) continue;
    if (check_finite_ && !adjoints_[id].all_finite()) {
      throw NumericalError("backward: non-finite adjoint at " + std::string(primitive_name(nodes_[id].op)) +
                           " node " + std::to_string(id));
    }
    propagate(id);
  }
  if (store_ == nullptr) return;
  // Accumulate in store order so the reduction is independent of hash order.
  for (std::size_t p = 0; p < store_->size(); ++p) {
    auto it = param_nodes_.find(p);
    if (it == param_nodes_.end() || adjoints_[it->second].empty()) continue;
    const Tensor& g = adjoints_[it->second];
    if (!g.all_finite()) {
      throw NumericalError("backward: non-finite gradient for parameter '" + store_->entry(p).name + "'");
    }
    Tensor& slot = store_->entry(p).grad;
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
  }
}

inline void backward(Tape& tape, Var loss) { tape.backward(loss); }

/// Compares reverse-mode gradients of `loss_fn` with central differences.
///
/// `loss_fn` must build the scalar loss on the tape it is handed, reading
/// parameters through `Tape::param`. The error is taken per named parameter
/// tensor as ||analytic - fd|| / (||analytic|| + 1e-12) and the maximum over
/// tensors is returned.
template <class LossFn>
double fd_gradient_check(LossFn&& loss_fn, ParamStore& store, double h) {
  if (!(h > 0.0)) throw ValidationError("fd_gradient_check: step must be positive");
  store.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape, store);
    if (!std::isfinite(loss.value().item())) throw NumericalError("fd_gradient_check: non-finite loss");
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    const double v = loss_fn(tape, store).value().item();
    if (!std::isfinite(v)) throw NumericalError("fd_gradient_check: non-finite loss");
    return v;
  };
  double worst = 0.0;
  for (auto& e : store.entries()) {
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + h;
      const double fp = eval();
      e.value[i] = saved - h;
      const double fm = eval();
      e.value[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      diff2 += (e.grad[i] - fd) * (e.grad[i] - fd);
      ref2 += e.grad[i] * e.grad[i];
    }
    worst = std::max(worst, std::sqrt(diff2) / (std::sqrt(ref2) + 1e-12));
  }
  return worst;
}

}  // namespace pidcon
