#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "pidcon/dataset.hpp"
#include "pidcon/geometry.hpp"
#include "pidcon/realization.hpp"
#include "pidcon/tensor.hpp"

namespace pidcon {

/// ||pred - ref||_2 / ||ref||_2 over all nodes and channels jointly.
inline double rel_l2(const Tensor& pred, const Tensor& ref) {
  if (pred.shape() != ref.shape()) {
    throw ShapeError("rel_l2: prediction " + shape_str(pred.shape()) + " vs reference " + shape_str(ref.shape()));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double e = pred[i] - ref[i];
    num += e * e;
    den += ref[i] * ref[i];
  }
  if (!(den > 0.0)) throw ValidationError("rel_l2: reference has zero norm");
  return std::sqrt(num / den);
}

/// p = (f/4)(R^2 - |x - c|^2): solves -lap p = f on a disk with p = 0 on the rim.
inline double analytic_disk_solution(double R, double f, Vec2 x, Vec2 center = {0.0, 0.0}) {
  const Vec2 d = x - center;
  return 0.25 * f * (R * R - dot(d, d));
}

inline ReferenceField analytic_disk_field(double R, double f, const Tensor& nodes, Vec2 center = {0.0, 0.0}) {
  ReferenceField out{0, nodes, Tensor(Shape{nodes.rows(), 1}), "analytic"};
  for (std::size_t i = 0; i < nodes.rows(); ++i) {
    out.values(i, 0) = analytic_disk_solution(R, f, {nodes(i, 0), nodes(i, 1)}, center);
  }
  return out;
}

/// Finite-difference solver for -lap p = f on an analytic domain embedded in a
/// uniform grid of spacing h. Unknowns are grid nodes strictly inside the
/// domain. Where an arm of the 5-point star leaves the domain, the neighbour
/// is replaced by the boundary crossing at fraction theta of the arm and its
/// Dirichlet value (Shortley-Weller), so the scheme stays second order on
/// curved and off-grid boundaries. The matrix depends only on the geometry:
/// it is factorized once and reused for every forcing/boundary pair.
class FdPoissonSolver {
 public:
  using Forcing = std::function<double(Vec2)>;
  using Dirichlet = std::function<double(Vec2, BoundaryTag)>;

  FdPoissonSolver(const GeometrySpec& g, double h) : h_(h) {
    if (!(h > 0.0)) throw ValidationError("fd solver: grid spacing must be positive");
    const Box b = g.bbox();
    origin_ = b.lo;
    nx_ = static_cast<std::size_t>(std::floor((b.hi.x - b.lo.x) / h + 1e-9)) + 1;
    ny_ = static_cast<std::size_t>(std::floor((b.hi.y - b.lo.y) / h + 1e-9)) + 1;
    if (nx_ < 3 || ny_ < 3) throw ValidationError("fd solver: grid too coarse for the domain");
    const double tol = 1e-9 * g.scale();
    index_.assign(nx_ * ny_, kNone);
    for (std::size_t j = 0; j < ny_; ++j) {
      for (std::size_t i = 0; i < nx_; ++i) {
        const Vec2 p = node(i, j);
        if (g.contains(p, tol)) {
          index_[j * nx_ + i] = cells_.size();
          cells_.push_back({i, j});
        }
      }
    }
    const std::size_t n = cells_.size();
    if (n == 0) throw ValidationError("fd solver: no grid node inside the domain");
    check_connected();

    std::vector<Eigen::Triplet<double>> trip;
    bnd_.resize(n);
    static constexpr int di[4] = {1, -1, 0, 0};
    static constexpr int dj[4] = {0, 0, 1, -1};
    for (std::size_t k = 0; k < n; ++k) {
      const auto [i, j] = cells_[k];
      const Vec2 p = node(i, j);
      double arm[4];
      std::size_t nb[4];
      Vec2 hit[4];
      BoundaryTag tag[4]{};
      for (int a = 0; a < 4; ++a) {
        const long ii = static_cast<long>(i) + di[a], jj = static_cast<long>(j) + dj[a];
        const bool on_grid = ii >= 0 && jj >= 0 && ii < static_cast<long>(nx_) && jj < static_cast<long>(ny_);
        nb[a] = on_grid ? index_[static_cast<std::size_t>(jj) * nx_ + static_cast<std::size_t>(ii)] : kNone;
        const Vec2 q = p + h * Vec2{static_cast<double>(di[a]), static_cast<double>(dj[a])};
        const auto c = g.first_crossing(p, q);
        if (nb[a] != kNone && !c) {
          arm[a] = h;
          continue;
        }
        if (!c) {
          std::ostringstream os;
          os << "fd solver: no boundary crossing between (" << p.x << ", " << p.y << ") and an outside neighbour";
          throw NumericalError(os.str());
        }
        nb[a] = kNone;
        arm[a] = std::max(c->fraction, 1e-6) * h;
        hit[a] = c->point;
        tag[a] = c->tag;
      }
      double diag = 0.0;
      for (int a = 0; a < 4; ++a) {
        const int opp = a ^ 1;
        const double coef = 2.0 / (arm[a] * (arm[a] + arm[opp]));
        diag += coef;
        if (nb[a] != kNone) {
          trip.emplace_back(static_cast<int>(k), static_cast<int>(nb[a]), -coef);
        } else {
          bnd_[k].push_back({coef, hit[a], tag[a]});
        }
      }
      trip.emplace_back(static_cast<int>(k), static_cast<int>(k), diag);
    }
    a_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    a_.setFromTriplets(trip.begin(), trip.end());
    a_.makeCompressed();
    lu_.analyzePattern(a_);
    lu_.factorize(a_);
    if (lu_.info() != Eigen::Success) throw NumericalError("fd solver: sparse LU factorization failed");
  }

  double spacing() const { return h_; }
  std::size_t unknowns() const { return cells_.size(); }

  /// Physical coordinates of the unknown nodes (n x 2).
  Tensor nodes() const {
    Tensor out(Shape{cells_.size(), 2});
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      const Vec2 p = node(cells_[k].first, cells_[k].second);
      out(k, 0) = p.x;
      out(k, 1) = p.y;
    }
    return out;
  }

  /// Solution at the unknown nodes. Throws if the relative residual of the
  /// linear system exceeds 1e-10.
  Tensor solve(const Forcing& f, const Dirichlet& g) const {
    const std::size_t n = cells_.size();
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      double v = f(node(cells_[k].first, cells_[k].second));
      for (const auto& bc : bnd_[k]) v += bc.coef * g(bc.point, bc.tag);
      rhs[static_cast<Eigen::Index>(k)] = v;
    }
    const Eigen::VectorXd u = lu_.solve(rhs);
    const double rn = rhs.norm();
    last_residual_ = rn > 0.0 ? (a_ * u - rhs).norm() / rn : u.norm();
    if (!(last_residual_ < 1e-10)) {
      std::ostringstream os;
      os << "fd solver: linear system residual " << last_residual_ << " exceeds 1e-10";
      throw NumericalError(os.str());
    }
    Tensor out(Shape{n, 1});
    for (std::size_t k = 0; k < n; ++k) out(k, 0) = u[static_cast<Eigen::Index>(k)];
    return out;
  }

  double last_residual() const { return last_residual_; }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct BoundaryCoupling {
    double coef;
    Vec2 point;
    BoundaryTag tag;
  };

  Vec2 node(std::size_t i, std::size_t j) const {
    return {origin_.x + static_cast<double>(i) * h_, origin_.y + static_cast<double>(j) * h_};
  }

  void check_connected() const {
    std::vector<char> seen(cells_.size(), 0);
    std::queue<std::size_t> todo;
    todo.push(0);
    seen[0] = 1;
    std::size_t reached = 1;
    while (!todo.empty()) {
      const auto [i, j] = cells_[todo.front()];
      todo.pop();
      const long nbs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& d : nbs) {
        const long ii = static_cast<long>(i) + d[0], jj = static_cast<long>(j) + d[1];
        if (ii < 0 || jj < 0 || ii >= static_cast<long>(nx_) || jj >= static_cast<long>(ny_)) continue;
        const std::size_t k = index_[static_cast<std::size_t>(jj) * nx_ + static_cast<std::size_t>(ii)];
        if (k == kNone || seen[k]) continue;
        seen[k] = 1;
        ++reached;
        todo.push(k);
      }
    }
    if (reached != cells_.size()) {
      throw ValidationError("fd solver: domain mask is disconnected at h = " + std::to_string(h_) + " (" +
                            std::to_string(reached) + " of " + std::to_string(cells_.size()) + " nodes reachable)");
    }
  }

  double h_;
  Vec2 origin_;
  std::size_t nx_ = 0, ny_ = 0;
  std::vector<std::size_t> index_;
  std::vector<std::pair<std::size_t, std::size_t>> cells_;
  std::vector<std::vector<BoundaryCoupling>> bnd_;
  Eigen::SparseMatrix<double> a_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
  mutable double last_residual_ = 0.0;
};

/// Reference fields for Darcy realizations: one factorization, one solve per
/// realization with f from the problem and Dirichlet values from its profiles.
inline std::vector<ReferenceField> darcy_references(const Problem& p, const std::vector<Realization>& rs,
                                                    double h) {
  if (p.physics.kind != ProblemKind::Darcy) {
    throw ValidationError("oracle: only the darcy problem has a finite-difference reference");
  }
  const FdPoissonSolver solver(p.geometry, h);
  const Tensor nodes = solver.nodes();
  const double f = p.physics.material.f;
  std::vector<ReferenceField> out;
  for (const auto& r : rs) {
    Tensor v = solver.solve([f](Vec2) { return f; },
                            [&](Vec2 x, BoundaryTag t) { return boundary_value(p, r, x, t); });
    out.push_back({r.id, nodes, std::move(v), "fd-oracle"});
  }
  return out;
}

}  // namespace pidcon
