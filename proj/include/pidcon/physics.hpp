#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pidcon/geometry.hpp"
#include "pidcon/jet.hpp"
#include "pidcon/models.hpp"
#include "pidcon/realization.hpp"

namespace pidcon {

enum class ProblemKind { Darcy, Plate };

inline std::string_view kind_name(ProblemKind k) { return k == ProblemKind::Darcy ? "darcy" : "plate"; }
inline ProblemKind parse_kind(std::string_view s) {
  if (s == "darcy") return ProblemKind::Darcy;
  if (s == "plate") return ProblemKind::Plate;
  throw ValidationError("unknown problem kind '" + std::string(s) + "'");
}

struct Material {
  double f = 10.0;
  double E = 1.0;
  double mu = 0.3;
};

/// PDE kind, material constants and loss weights keyed by term name
/// ("pde", "hole", "outer", "left", "right", "topbot").
struct ProblemSpec {
  ProblemKind kind = ProblemKind::Darcy;
  Material material;
  std::map<std::string, double> weights;

  static std::map<std::string, double> default_weights(ProblemKind k) {
    if (k == ProblemKind::Darcy) return {{"pde", 1.0}, {"hole", 500.0}, {"outer", 500.0}};
    return {{"pde", 1e-5}, {"hole", 1.0}, {"left", 1.0}, {"right", 1.0}, {"topbot", 1.0}};
  }

  static ProblemSpec darcy(double f = 10.0) {
    ProblemSpec p;
    p.material.f = f;
    p.weights = default_weights(ProblemKind::Darcy);
    return p;
  }

  static ProblemSpec plate(double E = 1.0, double mu = 0.3) {
    ProblemSpec p;
    p.kind = ProblemKind::Plate;
    p.material.E = E;
    p.material.mu = mu;
    p.weights = default_weights(ProblemKind::Plate);
    return p;
  }

  std::size_t outputs() const { return kind == ProblemKind::Darcy ? 1 : 2; }
  std::size_t value_channels() const { return outputs(); }
  std::size_t side_channels() const { return kind == ProblemKind::Darcy ? 0 : 2; }

  double weight(const std::string& term) const {
    const auto it = weights.find(term);
    if (it == weights.end()) throw ValidationError("no loss weight for term '" + term + "'");
    return it->second;
  }

  void validate() const {
    for (const auto& [name, w] : weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("loss weight '" + name + "' must be positive");
    }
    if (!std::isfinite(material.f)) throw ValidationError("forcing f must be finite");
    if (kind == ProblemKind::Plate) {
      if (!(material.E > 0.0)) throw ValidationError("plate: E must be positive");
      if (!(material.mu > 0.0 && material.mu < 0.5)) throw ValidationError("plate: mu must lie in (0, 0.5)");
    }
  }
};

struct LossBreakdown {
  Var total;
  double total_value = 0.0;
  std::map<std::string, double> terms;
  std::map<std::string, double> weights;
};

/// Model outputs on one boundary set together with its target values
/// (columns match outputs; empty for conditions without targets).
struct BcTerm {
  BoundaryTag tag = BoundaryTag::Outer;
  std::vector<Jet2> outputs;
  Tensor targets;
};

// ---------------------------------------------------------------------------
// Residuals
// ---------------------------------------------------------------------------

namespace detail {

inline Var part_or_zero(const Jet2& j, JetPart p) {
  const Var& v = j.part(p);
  return v.valid() ? v : j.val.tape().constant(j.component(p));
}

inline Var weighted_sum(const std::vector<std::pair<double, Var>>& parts) {
  Var acc;
  for (const auto& [w, v] : parts) {
    const Var t = scale(v, w);
    acc = acc.valid() ? add(acc, t) : t;
  }
  return acc;
}

inline Var mse(const Var& a) { return mean(square(a)); }

inline Var mse_target(const Var& out, const Tensor& target, std::size_t column) {
  const std::size_t n = out.value().rows();
  if (target.rows() != n || column >= target.cols()) {
    throw ShapeError("boundary target " + shape_str(target.shape()) + " does not match " + std::to_string(n) +
                     " outputs");
  }
  Tensor t(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) t(i, 0) = target(i, column);
  return mse(sub(out, out.tape().constant(std::move(t))));
}

inline LossBreakdown assemble(const ProblemSpec& problem, const std::vector<std::pair<std::string, Var>>& terms) {
  LossBreakdown lb;
  std::vector<std::pair<double, Var>> parts;
  for (const auto& [name, v] : terms) {
    const double w = problem.weight(name);
    lb.terms[name] = v.value().item();
    lb.weights[name] = w;
    parts.emplace_back(w, v);
  }
  lb.total = weighted_sum(parts);
  lb.total_value = lb.total.value().item();
  return lb;
}

inline std::string term_name(BoundaryTag t) {
  std::string s(tag_name(t));
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// r = p_xx + p_yy + f, so r = 0 solves -lap p = f with unit permeability.
inline Var darcy_residual(const Jet2& p, double f) {
  if (p.order < 2) throw ValidationError("darcy_residual: jet must carry second derivatives");
  return scale(add(detail::part_or_zero(p, JetPart::Dxx), detail::part_or_zero(p, JetPart::Dyy)), 1.0, f);
}

/// Plane-stress equilibrium residuals for displacements (u, v).
inline std::pair<Var, Var> plate_residuals(const Jet2& ju, const Jet2& jv, double E, double mu) {
  using detail::part_or_zero;
  if (ju.order < 2 || jv.order < 2) throw ValidationError("plate_residuals: jets must carry second derivatives");
  const double c = E / (1.0 - mu * mu);
  const double a = 0.5 * (1.0 - mu), b = 0.5 * (1.0 + mu);
  const Var r1 = add(add(part_or_zero(ju, JetPart::Dxx), scale(part_or_zero(ju, JetPart::Dyy), a)),
                     scale(part_or_zero(jv, JetPart::Dxy), b));
  const Var r2 = add(add(part_or_zero(jv, JetPart::Dyy), scale(part_or_zero(jv, JetPart::Dxx), a)),
                     scale(part_or_zero(ju, JetPart::Dxy), b));
  return {scale(r1, c), scale(r2, c)};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// L = a_pde mean(r^2) + sum over boundary sets of a_tag mean((p - target)^2).
inline LossBreakdown darcy_loss(const ProblemSpec& problem, const Jet2& interior, const std::vector<BcTerm>& bcs) {
  if (interior.val.value().rows() == 0) throw ValidationError("darcy_loss: empty collocation set");
  std::vector<std::pair<std::string, Var>> terms;
  terms.emplace_back("pde", detail::mse(darcy_residual(interior, problem.material.f)));
  for (const auto& bc : bcs) {
    if (bc.outputs.size() != 1) throw ShapeError("darcy_loss: expected one output channel");
    if (bc.outputs[0].val.value().rows() == 0) {
      throw ValidationError("darcy_loss: empty " + std::string(tag_name(bc.tag)) + " set");
    }
    terms.emplace_back(detail::term_name(bc.tag), detail::mse_target(bc.outputs[0].val, bc.targets, 0));
  }
  return detail::assemble(problem, terms);
}

/// L = a_0 (mean(r1^2) + mean(r2^2)) + value terms on HOLE/LEFT/RIGHT + the
/// traction-free TOPBOT term mean(v_y^2) + mean((0.5 (u_y + v_x))^2).
inline LossBreakdown plate_loss(const ProblemSpec& problem, const std::vector<Jet2>& interior,
                                const std::vector<BcTerm>& bcs) {
  if (interior.size() != 2) throw ShapeError("plate_loss: expected two output channels");
  if (interior[0].val.value().rows() == 0) throw ValidationError("plate_loss: empty collocation set");
  const auto [r1, r2] = plate_residuals(interior[0], interior[1], problem.material.E, problem.material.mu);
  std::vector<std::pair<std::string, Var>> terms;
  terms.emplace_back("pde", add(detail::mse(r1), detail::mse(r2)));
  for (const auto& bc : bcs) {
    if (bc.outputs.size() != 2) throw ShapeError("plate_loss: expected two output channels");
    if (bc.outputs[0].val.value().rows() == 0) {
      throw ValidationError("plate_loss: empty " + std::string(tag_name(bc.tag)) + " set");
    }
    const Jet2& u = bc.outputs[0];
    const Jet2& v = bc.outputs[1];
    Var term;
    if (bc.tag == BoundaryTag::TopBot) {
      if (u.order < 1 || v.order < 1) throw ValidationError("plate_loss: TOPBOT needs first derivatives");
      const Var vy = detail::part_or_zero(v, JetPart::Dy);
      const Var shear = scale(add(detail::part_or_zero(u, JetPart::Dy), detail::part_or_zero(v, JetPart::Dx)), 0.5);
      term = add(detail::mse(vy), detail::mse(shear));
    } else {
      term = add(detail::mse_target(u.val, bc.targets, 0), detail::mse_target(v.val, bc.targets, 1));
    }
    terms.emplace_back(detail::term_name(bc.tag), term);
  }
  return detail::assemble(problem, terms);
}

/// Mean squared error over all nodes and channels.
inline Var data_driven_loss(const std::vector<Var>& outputs, const Tensor& reference) {
  if (outputs.empty()) throw ShapeError("data_driven_loss: no outputs");
  if (reference.cols() != outputs.size()) {
    throw ShapeError("data_driven_loss: " + std::to_string(outputs.size()) + " outputs vs reference " +
                     shape_str(reference.shape()));
  }
  Var acc;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const Var e = detail::mse_target(outputs[k], reference, k);
    acc = acc.valid() ? add(acc, e) : e;
  }
  return scale(acc, 1.0 / static_cast<double>(outputs.size()));
}

// ---------------------------------------------------------------------------
// Model-driven assembly
// ---------------------------------------------------------------------------

/// Branch inputs of a realization in normalized coordinates: the OUTER values
/// for Darcy, LEFT and RIGHT (one-hot side 0 and 1) for the plate.
inline std::vector<BranchInput> branch_inputs(ProblemKind kind, const Realization& r, const CoordinateMap& map) {
  std::vector<BranchInput> out;
  auto make = [&](BoundaryTag t, int side, std::size_t sides) {
    const BoundarySet& s = r.set(t);
    out.push_back({map.to_normalized(s.points), s.values, side, sides});
  };
  if (kind == ProblemKind::Darcy) {
    make(BoundaryTag::Outer, -1, 0);
  } else {
    make(BoundaryTag::Left, 0, 2);
    make(BoundaryTag::Right, 1, 2);
  }
  return out;
}

/// Jet of the model at physical coordinates: normalized inputs seeded with
/// the map's scales so derivatives come out in physical units.
inline std::vector<Jet2> model_jet(Tape& tape, ParamStore& store, const OperatorModel& model, const Var& b,
                                   const CoordinateMap& map, const Tensor& physical, int order, bool cross) {
  return model.forward_jet(tape, store, b, jet_seed(tape, map.to_normalized(physical), order, cross, map.sx, map.sy));
}

/// Physics-informed loss of one realization with `interior` collocation
/// points (physical units). Reads boundary data only.
inline LossBreakdown physics_loss(Tape& tape, ParamStore& store, const OperatorModel& model,
                                  const ProblemSpec& problem, const CoordinateMap& map, const Realization& r,
                                  const Tensor& interior) {
  if (interior.rows() == 0) throw ValidationError("physics_loss: empty collocation set");
  const auto inputs = branch_inputs(problem.kind, r, map);
  const Var b = model.embed(tape, store, inputs);
  const bool plate = problem.kind == ProblemKind::Plate;
  const auto jin = model_jet(tape, store, model, b, map, interior, 2, plate);
  std::vector<BcTerm> bcs;
  for (const auto& s : r.sets) {
    if (s.points.rows() == 0) throw ValidationError("physics_loss: empty " + std::string(tag_name(s.tag)) + " set");
    const int order = s.tag == BoundaryTag::TopBot ? 1 : 0;
    bcs.push_back({s.tag, model_jet(tape, store, model, b, map, s.points, order, false), s.values});
  }
  return plate ? plate_loss(problem, jin, bcs) : darcy_loss(problem, jin.at(0), bcs);
}

/// Supervised loss against a reference field (data mode).
inline Var data_loss(Tape& tape, ParamStore& store, const OperatorModel& model, const ProblemSpec& problem,
                     const CoordinateMap& map, const Realization& r, const ReferenceField& ref) {
  const Var b = model.embed(tape, store, branch_inputs(problem.kind, r, map));
  return data_driven_loss(model.forward(tape, store, b, map.to_normalized(ref.nodes)), ref.values);
}

}  // namespace pidcon
