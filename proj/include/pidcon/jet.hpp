#pragma once

#include <array>
#include <cstddef>

#include "pidcon/tape.hpp"

namespace pidcon {

enum class JetPart { Val, Dx, Dy, Dxx, Dyy, Dxy };

/// Value, gradient and Hessian of a batch of features with respect to the
/// 2-D input coordinate.
///
/// Every component has the shape of `val` (points x features). A component
/// that is identically zero is stored as an absent Var so no work is recorded
/// for it; `component()` materializes it on demand. `order` caps the highest
/// derivative carried (0, 1 or 2) and `cross` says whether dxy is tracked.
struct Jet2 {
  Var val, dx, dy, dxx, dyy, dxy;
  int order = 2;
  bool cross = true;

  const Var& part(JetPart p) const {
    switch (p) {
      case JetPart::Val: return val;
      case JetPart::Dx: return dx;
      case JetPart::Dy: return dy;
      case JetPart::Dxx: return dxx;
      case JetPart::Dyy: return dyy;
      case JetPart::Dxy: return dxy;
    }
    return val;
  }

  Tensor component(JetPart p) const {
    const Var& v = part(p);
    return v.valid() ? v.value() : Tensor(val.value().shape());
  }
};

namespace detail {

inline Var mul_opt(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) return {};
  return hadamard(a, b);
}

inline Var add_opt(const Var& a, const Var& b) {
  if (!a.valid()) return b;
  if (!b.valid()) return a;
  return add(a, b);
}

}  // namespace detail

/// Identity jet for coordinates `coords` (n x 2). `sx`, `sy` are the
/// derivatives of the stored coordinate with respect to the physical one, so
/// seeding normalized coordinates with the normalization scales yields
/// derivatives in physical units.
inline Jet2 jet_seed(Tape& tape, const Tensor& coords, int order = 2, bool cross = true, double sx = 1.0,
                     double sy = 1.0) {
  if (coords.rank() != 2 || coords.cols() != 2) {
    throw ShapeError("jet_seed: coordinates must be n x 2, got " + shape_str(coords.shape()));
  }
  if (!coords.all_finite()) throw ValidationError("jet_seed: non-finite coordinate");
  Jet2 j;
  j.order = order;
  j.cross = cross && order >= 2;
  j.val = tape.constant(coords);
  if (order >= 1) {
    const std::size_t n = coords.rows();
    Tensor ex(Shape{n, 2}), ey(Shape{n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      ex(i, 0) = sx;
      ey(i, 1) = sy;
    }
    j.dx = tape.constant(std::move(ex));
    j.dy = tape.constant(std::move(ey));
  }
  return j;
}

/// val' = val * W + B, d' = d * W for every derivative component. `W` is
/// stored input-major (in x out) and `B` is a 1 x out row.
inline Jet2 jet_affine(const Var& W, const Var& B, const Jet2& j) {
  Jet2 out;
  out.order = j.order;
  out.cross = j.cross;
  out.val = add(matmul(j.val, W), B);
  auto lin = [&](const Var& d) { return d.valid() ? matmul(d, W) : Var{}; };
  out.dx = lin(j.dx);
  out.dy = lin(j.dy);
  out.dxx = lin(j.dxx);
  out.dyy = lin(j.dyy);
  out.dxy = lin(j.dxy);
  return out;
}

/// Elementwise tanh with s = tanh(val), s' = 1 - s^2, s'' = -2 s s':
/// d' = s' d and dab' = s'' da db + s' dab.
inline Jet2 jet_tanh(const Jet2& j) {
  using detail::add_opt;
  using detail::mul_opt;
  Jet2 out;
  out.order = j.order;
  out.cross = j.cross;
  out.val = tanh(j.val);
  const bool has_first = j.dx.valid() || j.dy.valid();
  const bool has_second = j.dxx.valid() || j.dyy.valid() || j.dxy.valid();
  if (j.order < 1 || (!has_first && !has_second)) return out;
  const Var s1 = scale(square(out.val), -1.0, 1.0);
  out.dx = mul_opt(s1, j.dx);
  out.dy = mul_opt(s1, j.dy);
  if (j.order < 2) return out;
  Var s2;
  if (has_first) s2 = scale(hadamard(out.val, s1), -2.0);
  auto second = [&](const Var& da, const Var& db, const Var& dab) {
    Var curvature;
    if (s2.valid() && da.valid() && db.valid()) {
      curvature = hadamard(s2, da.id() == db.id() ? square(da) : hadamard(da, db));
    }
    return add_opt(curvature, mul_opt(s1, dab));
  };
  out.dxx = second(j.dx, j.dx, j.dxx);
  out.dyy = second(j.dy, j.dy, j.dyy);
  if (j.cross) out.dxy = second(j.dx, j.dy, j.dxy);
  return out;
}

/// Every component multiplied elementwise by `b`, a 1 x q row that does not
/// depend on the coordinate.
inline Jet2 jet_hadamard_const(const Var& b, const Jet2& j) {
  Jet2 out;
  out.order = j.order;
  out.cross = j.cross;
  out.val = hadamard(j.val, b);
  auto mul = [&](const Var& d) { return d.valid() ? hadamard(d, b) : Var{}; };
  out.dx = mul(j.dx);
  out.dy = mul(j.dy);
  out.dxx = mul(j.dxx);
  out.dyy = mul(j.dyy);
  out.dxy = mul(j.dxy);
  return out;
}

/// Sum over the feature axis of all components (n x q -> n x 1).
inline Jet2 jet_reduce_sum(const Jet2& j) {
  Jet2 out;
  out.order = j.order;
  out.cross = j.cross;
  out.val = sum(j.val, 1);
  auto red = [](const Var& d) { return d.valid() ? sum(d, 1) : Var{}; };
  out.dx = red(j.dx);
  out.dy = red(j.dy);
  out.dxx = red(j.dxx);
  out.dyy = red(j.dyy);
  out.dxy = red(j.dxy);
  return out;
}

/// Columns [begin, end) of every component.
inline Jet2 jet_slice(const Jet2& j, std::size_t begin, std::size_t end) {
  Jet2 out;
  out.order = j.order;
  out.cross = j.cross;
  out.val = slice(j.val, 1, begin, end);
  auto sl = [&](const Var& d) { return d.valid() ? slice(d, 1, begin, end) : Var{}; };
  out.dx = sl(j.dx);
  out.dy = sl(j.dy);
  out.dxx = sl(j.dxx);
  out.dyy = sl(j.dyy);
  out.dxy = sl(j.dxy);
  return out;
}

}  // namespace pidcon
