#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pidcon/geometry.hpp"
#include "pidcon/gp.hpp"
#include "pidcon/tensor.hpp"

namespace pidcon {

/// Boundary points of one tag (physical units) and their prescribed values
/// (m x c; c = 0 for conditions that carry no target values).
struct BoundarySet {
  BoundaryTag tag = BoundaryTag::Outer;
  Tensor points;
  Tensor values;
};

/// One sampled PDE parameter: variable-size boundary sets plus the boundary
/// functions they were drawn from.
struct Realization {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  std::vector<BoundarySet> sets;
  std::vector<GpProfile> profiles;

  bool has(BoundaryTag t) const {
    for (const auto& s : sets)
      if (s.tag == t) return true;
    return false;
  }

  const BoundarySet& set(BoundaryTag t) const {
    for (const auto& s : sets)
      if (s.tag == t) return s;
    throw ValidationError("realization " + std::to_string(id) + " has no " + std::string(tag_name(t)) + " set");
  }

  const GpProfile* profile(std::string_view name) const {
    for (const auto& p : profiles)
      if (p.name == name) return &p;
    return nullptr;
  }
};

/// Solution samples at fixed nodes: n x 2 physical coordinates and n x c values.
struct ReferenceField {
  std::uint64_t id = 0;
  Tensor nodes;
  Tensor values;
  std::string provenance = "fd-oracle";
};

}  // namespace pidcon
