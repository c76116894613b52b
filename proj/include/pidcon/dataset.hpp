#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pidcon/geometry.hpp"
#include "pidcon/gp.hpp"
#include "pidcon/physics.hpp"
#include "pidcon/random.hpp"
#include "pidcon/realization.hpp"

namespace pidcon {

/// Inclusive range for the number of points drawn on one boundary tag;
/// lo == hi gives a fixed discretization.
struct CountRange {
  std::size_t lo = 100;
  std::size_t hi = 100;
};

/// How realizations are generated: domain, GP prior for the boundary
/// functions and per-tag point counts.
struct DatasetSpec {
  std::string geometry = "pentagram";
  std::map<std::string, double> geometry_params;
  GPSpec gp;
  std::map<BoundaryTag, CountRange> counts;
  bool zero_boundary = false;
  std::size_t profile_knots = 129;

  static DatasetSpec darcy_defaults() {
    DatasetSpec d;
    d.counts = {{BoundaryTag::Hole, {30, 80}}, {BoundaryTag::Outer, {100, 300}}};
    return d;
  }

  static DatasetSpec plate_defaults() {
    DatasetSpec d;
    d.geometry = "plate";
    d.gp = GPSpec{1.0, 5.0, Axis::Y, 1e-10};
    d.counts = {{BoundaryTag::Hole, {30, 80}},
                {BoundaryTag::Left, {50, 150}},
                {BoundaryTag::Right, {50, 150}},
                {BoundaryTag::TopBot, {50, 150}}};
    return d;
  }
};

inline double param_or(const std::map<std::string, double>& params, const std::string& key, double fallback) {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

/// Builds one of the named domains: pentagram, plate, disk, square/rectangle.
inline GeometrySpec build_geometry(const std::string& name, const std::map<std::string, double>& p) {
  static const std::map<std::string, std::vector<std::string>> known = {
      {"pentagram", {"outer_radius", "inner_radius", "hole_radius"}},
      {"plate", {"width", "height", "hole_diameter"}},
      {"disk", {"radius"}},
      {"square", {"side"}},
      {"rectangle", {"width", "height"}},
  };
  const auto it = known.find(name);
  if (it == known.end()) throw ValidationError("unknown geometry '" + name + "'");
  for (const auto& [key, value] : p) {
    if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
      throw ValidationError("geometry '" + name + "' has no parameter '" + key + "'");
    }
  }
  if (name == "pentagram") {
    return build_pentagram(param_or(p, "outer_radius", 1.0), param_or(p, "inner_radius", 0.382),
                           param_or(p, "hole_radius", 0.2));
  }
  if (name == "plate") {
    return build_plate(param_or(p, "width", 20.0), param_or(p, "height", 20.0), param_or(p, "hole_diameter", 5.0));
  }
  if (name == "disk") return build_disk(param_or(p, "radius", 1.0));
  if (name == "square") {
    const double s = param_or(p, "side", 1.0);
    return build_rectangle(s, s);
  }
  return build_rectangle(param_or(p, "width", 1.0), param_or(p, "height", 1.0));
}

/// Everything needed to generate, train on and evaluate one problem family.
struct Problem {
  ProblemSpec physics;
  DatasetSpec data;
  GeometrySpec geometry;
  CoordinateMap map;

  static Problem make(ProblemSpec physics, DatasetSpec data) {
    physics.validate();
    data.gp.validate();
    Problem p{std::move(physics), std::move(data), {}, {}};
    p.geometry = build_geometry(p.data.geometry, p.data.geometry_params);
    p.map = p.geometry.normalizer();
    for (BoundaryTag t : p.geometry.tags()) {
      const auto c = p.data.counts.find(t);
      if (c == p.data.counts.end()) {
        throw ValidationError("no point count for boundary " + std::string(tag_name(t)) + " of '" +
                              p.geometry.name + "'");
      }
      if (c->second.lo < 1 || c->second.hi < c->second.lo) {
        throw ValidationError("invalid point count range for " + std::string(tag_name(t)));
      }
    }
    if (p.physics.kind == ProblemKind::Darcy && !p.geometry.has_tag(BoundaryTag::Outer)) {
      throw ValidationError("darcy: geometry needs an OUTER boundary");
    }
    if (p.physics.kind == ProblemKind::Plate &&
        !(p.geometry.has_tag(BoundaryTag::Left) && p.geometry.has_tag(BoundaryTag::Right))) {
      throw ValidationError("plate: geometry needs LEFT and RIGHT boundaries");
    }
    for (BoundaryTag t : p.geometry.tags()) {
      if (!p.physics.weights.contains(detail::term_name(t))) {
        throw ValidationError("no loss weight for boundary " + std::string(tag_name(t)));
      }
    }
    return p;
  }

  /// Extent of the projected coordinate over the domain's bounding box.
  std::pair<double, double> projected_range() const {
    const Box b = geometry.bbox();
    return data.gp.axis == Axis::X ? std::pair{b.lo.x, b.hi.x} : std::pair{b.lo.y, b.hi.y};
  }
};

namespace detail {

enum Stream : std::uint64_t { kRealization = 1, kCount = 2, kPoints = 3, kProfile = 4 };

inline std::vector<std::string> profile_names(ProblemKind k) {
  if (k == ProblemKind::Darcy) return {"g"};
  return {"u_l", "v_l", "u_r", "v_r"};
}

}  // namespace detail

/// Realization `id` under master seed `seed`. Every draw uses its own derived
/// stream, so a realization does not depend on how many others are generated.
inline Realization generate_realization(const Problem& p, std::uint64_t seed, std::uint64_t id) {
  Realization r;
  r.id = id;
  r.seed = derive_seed(seed, {detail::kRealization, id});
  const auto [lo, hi] = p.projected_range();
  const auto names = detail::profile_names(p.physics.kind);
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (p.data.zero_boundary) {
      GpProfile z{names[k], p.data.gp, {lo, hi}, {0.0, 0.0}};
      r.profiles.push_back(std::move(z));
    } else {
      r.profiles.push_back(
          draw_profile(names[k], p.data.gp, lo, hi, p.data.profile_knots, derive_seed(r.seed, {detail::kProfile, k})));
    }
  }
  for (BoundaryTag t : p.geometry.tags()) {
    const CountRange c = p.data.counts.at(t);
    CounterRng count_rng(derive_seed(r.seed, {detail::kCount, static_cast<std::uint64_t>(t)}));
    const std::size_t m = static_cast<std::size_t>(count_rng.uniform_int(c.lo, c.hi));
    PointSet ps = sample_boundary(p.geometry, t, m, derive_seed(r.seed, {detail::kPoints, static_cast<std::uint64_t>(t)}));
    BoundarySet s{t, ps.coords, Tensor(Shape{m, 0})};
    const std::size_t channels = p.physics.outputs();
    auto fill = [&](const GpProfile* a, const GpProfile* b) {
      s.values = Tensor(Shape{m, channels});
      for (std::size_t i = 0; i < m; ++i) {
        const Vec2 q = ps.point(i);
        if (a) s.values(i, 0) = (*a)(q);
        if (b) s.values(i, 1) = (*b)(q);
      }
    };
    switch (t) {
      case BoundaryTag::Hole: fill(nullptr, nullptr); break;
      case BoundaryTag::Outer: fill(r.profile("g"), nullptr); break;
      case BoundaryTag::Left: fill(r.profile("u_l"), r.profile("v_l")); break;
      case BoundaryTag::Right: fill(r.profile("u_r"), r.profile("v_r")); break;
      default: break;
    }
    r.sets.push_back(std::move(s));
  }
  return r;
}

inline std::vector<Realization> generate_realizations(const Problem& p, std::size_t n, std::uint64_t seed) {
  std::vector<Realization> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_realization(p, seed, i));
  return out;
}

/// Dirichlet value prescribed at boundary point `x` with tag `t`, channel `c`.
inline double boundary_value(const Problem& p, const Realization& r, Vec2 x, BoundaryTag t, std::size_t c = 0) {
  auto eval = [&](std::string_view name) {
    const GpProfile* g = r.profile(name);
    if (!g) throw ValidationError("realization " + std::to_string(r.id) + " lacks profile " + std::string(name));
    return (*g)(x);
  };
  switch (t) {
    case BoundaryTag::Hole: return 0.0;
    case BoundaryTag::Outer: return p.physics.kind == ProblemKind::Darcy ? eval("g") : 0.0;
    case BoundaryTag::Left: return eval(c == 0 ? "u_l" : "v_l");
    case BoundaryTag::Right: return eval(c == 0 ? "u_r" : "v_r");
    default: throw ValidationError("boundary " + std::string(tag_name(t)) + " carries no Dirichlet value");
  }
}

}  // namespace pidcon
