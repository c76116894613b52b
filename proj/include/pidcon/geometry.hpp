#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pidcon/random.hpp"
#include "pidcon/tensor.hpp"

namespace pidcon {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

enum class BoundaryTag { Hole, Outer, Left, Right, TopBot, Interior };

inline std::string_view tag_name(BoundaryTag t) {
  switch (t) {
    case BoundaryTag::Hole: return "HOLE";
    case BoundaryTag::Outer: return "OUTER";
    case BoundaryTag::Left: return "LEFT";
    case BoundaryTag::Right: return "RIGHT";
    case BoundaryTag::TopBot: return "TOPBOT";
    case BoundaryTag::Interior: return "INTERIOR";
  }
  return "?";
}

/// Accepts tag names in either case ("OUTER" or "outer").
inline BoundaryTag parse_tag(std::string_view s) {
  std::string up(s);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto t : {BoundaryTag::Hole, BoundaryTag::Outer, BoundaryTag::Left, BoundaryTag::Right, BoundaryTag::TopBot,
                 BoundaryTag::Interior}) {
    if (tag_name(t) == up) return t;
  }
  throw ValidationError("unknown boundary tag '" + std::string(s) + "'");
}

/// Closed polygon; the last vertex connects back to the first.
struct Polygon {
  std::vector<Vec2> vertices;
};

struct Circle {
  Vec2 center;
  double radius = 1.0;
};

using Curve = std::variant<Polygon, Circle>;

/// Part of a curve, as a range of its arc-length fraction t in [0, 1].
struct CurveRange {
  std::size_t curve = 0;
  double t0 = 0.0;
  double t1 = 1.0;
};

struct Segment {
  BoundaryTag tag;
  std::vector<CurveRange> ranges;
};

struct Box {
  Vec2 lo, hi;
};

/// Coordinates (n x 2) with the boundary tag they were drawn from, or
/// INTERIOR for collocation points.
struct PointSet {
  Tensor coords;
  BoundaryTag tag = BoundaryTag::Interior;

  std::size_t size() const { return coords.rows(); }
  Vec2 point(std::size_t i) const { return {coords(i, 0), coords(i, 1)}; }
};

namespace geom {

inline double length(const Curve& c) {
  if (const auto* circle = std::get_if<Circle>(&c)) return 2.0 * std::numbers::pi * circle->radius;
  const auto& v = std::get<Polygon>(c).vertices;
  double len = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) len += norm(v[(i + 1) % v.size()] - v[i]);
  return len;
}

/// Point at arc-length fraction t. Circles start at angle 0 and run
/// counter-clockwise; polygons start at vertex 0 and follow vertex order.
inline Vec2 point_at(const Curve& c, double t) {
  if (const auto* circle = std::get_if<Circle>(&c)) {
    const double a = 2.0 * std::numbers::pi * t;
    return {circle->center.x + circle->radius * std::cos(a), circle->center.y + circle->radius * std::sin(a)};
  }
  const auto& v = std::get<Polygon>(c).vertices;
  double remaining = std::clamp(t, 0.0, 1.0) * length(c);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i], b = v[(i + 1) % v.size()];
    const double e = norm(b - a);
    if (remaining <= e || i + 1 == v.size()) {
      const double s = e > 0.0 ? std::min(remaining / e, 1.0) : 0.0;
      return a + s * (b - a);
    }
    remaining -= e;
  }
  return v.front();
}

/// Arc-length fraction of a point known to lie on the curve.
inline double param_of(const Curve& c, Vec2 p) {
  if (const auto* circle = std::get_if<Circle>(&c)) {
    double a = std::atan2(p.y - circle->center.y, p.x - circle->center.x);
    if (a < 0.0) a += 2.0 * std::numbers::pi;
    return a / (2.0 * std::numbers::pi);
  }
  const auto& v = std::get<Polygon>(c).vertices;
  const double total = length(c);
  double best = std::numeric_limits<double>::infinity(), best_t = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i], b = v[(i + 1) % v.size()];
    const Vec2 d = b - a;
    const double e2 = dot(d, d);
    const double s = e2 > 0.0 ? std::clamp(dot(p - a, d) / e2, 0.0, 1.0) : 0.0;
    const double dist = norm(p - (a + s * d));
    if (dist < best) {
      best = dist;
      best_t = (acc + s * std::sqrt(e2)) / total;
    }
    acc += std::sqrt(e2);
  }
  return best_t;
}

inline double distance(const Curve& c, Vec2 p) {
  if (const auto* circle = std::get_if<Circle>(&c)) return std::abs(norm(p - circle->center) - circle->radius);
  const auto& v = std::get<Polygon>(c).vertices;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i], d = v[(i + 1) % v.size()] - a;
    const double e2 = dot(d, d);
    const double s = e2 > 0.0 ? std::clamp(dot(p - a, d) / e2, 0.0, 1.0) : 0.0;
    best = std::min(best, norm(p - (a + s * d)));
  }
  return best;
}

inline double area(const Curve& c) {
  if (const auto* circle = std::get_if<Circle>(&c)) return std::numbers::pi * circle->radius * circle->radius;
  const auto& v = std::get<Polygon>(c).vertices;
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += cross(v[i], v[(i + 1) % v.size()]);
  return std::abs(0.5 * s);
}

inline Box bounds(const Curve& c) {
  if (const auto* circle = std::get_if<Circle>(&c)) {
    return {{circle->center.x - circle->radius, circle->center.y - circle->radius},
            {circle->center.x + circle->radius, circle->center.y + circle->radius}};
  }
  const auto& v = std::get<Polygon>(c).vertices;
  Box b{v.front(), v.front()};
  for (const auto& p : v) {
    b.lo = {std::min(b.lo.x, p.x), std::min(b.lo.y, p.y)};
    b.hi = {std::max(b.hi.x, p.x), std::max(b.hi.y, p.y)};
  }
  return b;
}

/// Smallest s in (0, 1] with from + s (to - from) on the curve.
inline std::optional<double> first_hit(const Curve& c, Vec2 from, Vec2 to) {
  const Vec2 d = to - from;
  std::optional<double> best;
  auto consider = [&](double s) {
    if (s > 1e-14 && s <= 1.0 + 1e-12 && (!best || s < *best)) best = std::min(s, 1.0);
  };
  if (const auto* circle = std::get_if<Circle>(&c)) {
    const Vec2 f = from - circle->center;
    const double a = dot(d, d), b = 2.0 * dot(f, d), cc = dot(f, f) - circle->radius * circle->radius;
    const double disc = b * b - 4.0 * a * cc;
    if (a == 0.0 || disc < 0.0) return best;
    const double sq = std::sqrt(disc);
    // Numerically stable pair of roots.
    const double qq = -0.5 * (b + std::copysign(sq, b));
    if (qq != 0.0) {
      consider(qq / a);
      consider(cc / qq);
    } else {
      consider(0.0);
    }
    return best;
  }
  const auto& v = std::get<Polygon>(c).vertices;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i], e = v[(i + 1) % v.size()] - a;
    const double den = cross(d, e);
    if (den == 0.0) continue;
    const Vec2 w = a - from;
    const double s = cross(w, e) / den;
    const double u = cross(w, d) / den;
    if (u >= -1e-12 && u <= 1.0 + 1e-12) consider(s);
  }
  return best;
}

}  // namespace geom

/// Even-odd ray-crossing test. Points on an edge count as inside.
inline bool point_in_polygon(Vec2 p, const Polygon& poly) {
  const auto& v = poly.vertices;
  const Box b = geom::bounds(poly);
  const double scale = std::max({b.hi.x - b.lo.x, b.hi.y - b.lo.y, 1.0});
  if (geom::distance(Curve{poly}, p) <= 1e-12 * scale) return true;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double xc = v[j].x + (p.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (p.x < xc) inside = !inside;
    }
  }
  return inside;
}

inline bool point_in_star(Vec2 p, const Polygon& star) { return point_in_polygon(p, star); }

inline bool inside_closed(const Curve& c, Vec2 p) {
  if (const auto* circle = std::get_if<Circle>(&c)) return norm(p - circle->center) <= circle->radius;
  return point_in_polygon(p, std::get<Polygon>(c));
}

/// Affine map of a bounding box onto [-1, 1]^2.
struct CoordinateMap {
  Vec2 center;
  double sx = 1.0;
  double sy = 1.0;

  static CoordinateMap from_box(const Box& b) {
    return {{0.5 * (b.lo.x + b.hi.x), 0.5 * (b.lo.y + b.hi.y)}, 2.0 / (b.hi.x - b.lo.x), 2.0 / (b.hi.y - b.lo.y)};
  }

  Tensor to_normalized(const Tensor& xy) const {
    Tensor out(xy.shape());
    for (std::size_t i = 0; i < xy.rows(); ++i) {
      out(i, 0) = (xy(i, 0) - center.x) * sx;
      out(i, 1) = (xy(i, 1) - center.y) * sy;
    }
    return out;
  }

  Tensor to_physical(const Tensor& xi) const {
    Tensor out(xi.shape());
    for (std::size_t i = 0; i < xi.rows(); ++i) {
      out(i, 0) = xi(i, 0) / sx + center.x;
      out(i, 1) = xi(i, 1) / sy + center.y;
    }
    return out;
  }
};

/// Analytic 2-D domain: curves[0] is the outer boundary, `holes` index the
/// interior curves, and tagged segments partition every curve.
struct GeometrySpec {
  std::string name;
  std::map<std::string, double> params;
  std::vector<Curve> curves;
  std::vector<std::size_t> holes;
  std::vector<Segment> segments;

  const Curve& outer() const { return curves.front(); }
  Box bbox() const { return geom::bounds(outer()); }
  double scale() const {
    const Box b = bbox();
    return std::max(b.hi.x - b.lo.x, b.hi.y - b.lo.y);
  }
  CoordinateMap normalizer() const { return CoordinateMap::from_box(bbox()); }

  bool has_tag(BoundaryTag t) const {
    return std::any_of(segments.begin(), segments.end(), [t](const Segment& s) { return s.tag == t; });
  }

  const Segment& segment(BoundaryTag t) const {
    for (const auto& s : segments)
      if (s.tag == t) return s;
    throw ValidationError("geometry '" + name + "' has no segment " + std::string(tag_name(t)));
  }

  std::vector<BoundaryTag> tags() const {
    std::vector<BoundaryTag> out;
    for (const auto& s : segments) out.push_back(s.tag);
    return out;
  }

  /// Strict interior: inside the outer curve, outside every hole, and farther
  /// than `tol` from all boundary curves.
  bool contains(Vec2 p, double tol = 0.0) const {
    if (!inside_closed(outer(), p)) return false;
    for (std::size_t h : holes)
      if (inside_closed(curves[h], p)) return false;
    if (tol > 0.0) {
      for (const auto& c : curves)
        if (geom::distance(c, p) <= tol) return false;
    }
    return true;
  }

  double area() const {
    double a = geom::area(outer());
    for (std::size_t h : holes) a -= geom::area(curves[h]);
    return a;
  }

  double distance_to_tag(Vec2 p, BoundaryTag t) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : segment(t).ranges) best = std::min(best, geom::distance(curves[r.curve], p));
    return best;
  }

  /// Tag of the segment containing arc fraction `t` on curve `curve`.
  BoundaryTag tag_at(std::size_t curve, double t) const {
    std::optional<BoundaryTag> nearest;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : segments) {
      for (const auto& r : s.ranges) {
        if (r.curve != curve) continue;
        if (t >= r.t0 && t <= r.t1) return s.tag;
        const double d = std::min(std::abs(t - r.t0), std::abs(t - r.t1));
        if (d < best) {
          best = d;
          nearest = s.tag;
        }
      }
    }
    if (!nearest) throw ValidationError("geometry: curve " + std::to_string(curve) + " has no segment");
    return *nearest;
  }

  struct Crossing {
    double fraction;  // along from -> to
    Vec2 point;
    BoundaryTag tag;
  };

  /// First boundary crossing on the straight path from `from` to `to`.
  std::optional<Crossing> first_crossing(Vec2 from, Vec2 to) const {
    std::optional<Crossing> best;
    for (std::size_t c = 0; c < curves.size(); ++c) {
      const auto s = geom::first_hit(curves[c], from, to);
      if (!s || (best && *s >= best->fraction)) continue;
      const Vec2 p = from + *s * (to - from);
      best = Crossing{*s, p, tag_at(c, geom::param_of(curves[c], p))};
    }
    return best;
  }
};

/// Regular 10-vertex star (alternating outer/inner radii, tip 0 at (0, R))
/// with a centered circular hole.
inline GeometrySpec build_pentagram(double outer_radius = 1.0, double inner_radius = 0.382,
                                    double hole_radius = 0.2) {
  if (!(hole_radius > 0.0 && hole_radius < inner_radius && inner_radius < outer_radius)) {
    throw ValidationError("pentagram: need 0 < hole_radius < inner_radius < outer_radius");
  }
  Polygon star;
  for (int k = 0; k < 10; ++k) {
    const double a = std::numbers::pi / 2.0 + k * std::numbers::pi / 5.0;
    const double r = k % 2 == 0 ? outer_radius : inner_radius;
    star.vertices.push_back({r * std::cos(a), r * std::sin(a)});
  }
  star.vertices[0] = {0.0, outer_radius};
  if (geom::distance(Curve{star}, {0.0, 0.0}) <= hole_radius) {
    throw ValidationError("pentagram: hole does not fit strictly inside the star");
  }
  GeometrySpec g;
  g.name = "pentagram";
  g.params = {{"outer_radius", outer_radius}, {"inner_radius", inner_radius}, {"hole_radius", hole_radius}};
  g.curves = {star, Circle{{0.0, 0.0}, hole_radius}};
  g.holes = {1};
  g.segments = {{BoundaryTag::Outer, {{0, 0.0, 1.0}}}, {BoundaryTag::Hole, {{1, 0.0, 1.0}}}};
  return g;
}

/// Rectangle [0, width] x [0, height] with a centered circular hole. LEFT is
/// x = 0, RIGHT is x = width, TOPBOT the horizontal edges.
inline GeometrySpec build_plate(double width = 20.0, double height = 20.0, double hole_diameter = 5.0) {
  if (!(width > 0.0 && height > 0.0 && hole_diameter > 0.0 && hole_diameter < std::min(width, height))) {
    throw ValidationError("plate: need 0 < hole_diameter < min(width, height)");
  }
  Polygon rect{{{0.0, 0.0}, {width, 0.0}, {width, height}, {0.0, height}}};
  const double p = 2.0 * (width + height);
  GeometrySpec g;
  g.name = "plate";
  g.params = {{"width", width}, {"height", height}, {"hole_diameter", hole_diameter}};
  g.curves = {rect, Circle{{0.5 * width, 0.5 * height}, 0.5 * hole_diameter}};
  g.holes = {1};
  g.segments = {
      {BoundaryTag::Hole, {{1, 0.0, 1.0}}},
      {BoundaryTag::Left, {{0, (2.0 * width + height) / p, 1.0}}},
      {BoundaryTag::Right, {{0, width / p, (width + height) / p}}},
      {BoundaryTag::TopBot, {{0, 0.0, width / p}, {0, (width + height) / p, (2.0 * width + height) / p}}},
  };
  return g;
}

/// Disk of radius R centered at the origin; the whole circle is OUTER.
inline GeometrySpec build_disk(double radius = 1.0) {
  if (!(radius > 0.0)) throw ValidationError("disk: radius must be positive");
  GeometrySpec g;
  g.name = "disk";
  g.params = {{"radius", radius}};
  g.curves = {Circle{{0.0, 0.0}, radius}};
  g.segments = {{BoundaryTag::Outer, {{0, 0.0, 1.0}}}};
  return g;
}

/// Rectangle [0, width] x [0, height] without holes; the whole perimeter is OUTER.
inline GeometrySpec build_rectangle(double width = 1.0, double height = 1.0) {
  if (!(width > 0.0 && height > 0.0)) throw ValidationError("rectangle: extents must be positive");
  GeometrySpec g;
  g.name = "rectangle";
  g.params = {{"width", width}, {"height", height}};
  g.curves = {Polygon{{{0.0, 0.0}, {width, 0.0}, {width, height}, {0.0, height}}}};
  g.segments = {{BoundaryTag::Outer, {{0, 0.0, 1.0}}}};
  return g;
}

/// m points, independently uniform in arc length over the segment(s) tagged `tag`.
inline PointSet sample_boundary(const GeometrySpec& g, BoundaryTag tag, std::size_t m, std::uint64_t seed) {
  if (m < 1) throw ValidationError("sample_boundary: need at least one point");
  const Segment& seg = g.segment(tag);
  std::vector<double> lengths;
  double total = 0.0;
  for (const auto& r : seg.ranges) {
    lengths.push_back((r.t1 - r.t0) * geom::length(g.curves[r.curve]));
    total += lengths.back();
  }
  CounterRng rng(seed);
  PointSet ps{Tensor(Shape{m, 2}), tag};
  for (std::size_t i = 0; i < m; ++i) {
    double u = rng.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < lengths.size() && u > lengths[k]) u -= lengths[k++];
    const auto& r = seg.ranges[k];
    const double t = r.t0 + (r.t1 - r.t0) * std::clamp(u / lengths[k], 0.0, 1.0);
    const Vec2 p = geom::point_at(g.curves[r.curve], t);
    ps.coords(i, 0) = p.x;
    ps.coords(i, 1) = p.y;
  }
  return ps;
}

/// n interior points by rejection from the bounding box.
inline PointSet sample_interior(const GeometrySpec& g, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample_interior: need at least one point");
  const Box b = g.bbox();
  CounterRng rng(seed);
  PointSet ps{Tensor(Shape{n, 2}), BoundaryTag::Interior};
  std::size_t accepted = 0, trials = 0;
  while (accepted < n) {
    const Vec2 p{rng.uniform(b.lo.x, b.hi.x), rng.uniform(b.lo.y, b.hi.y)};
    ++trials;
    if (g.contains(p)) {
      ps.coords(accepted, 0) = p.x;
      ps.coords(accepted, 1) = p.y;
      ++accepted;
    }
    if (trials >= 1000 && static_cast<double>(accepted) < 1e-3 * static_cast<double>(trials)) {
      throw ValidationError("sample_interior: acceptance rate below 1e-3 for geometry '" + g.name + "'");
    }
  }
  return ps;
}

}  // namespace pidcon
