#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pidcon/geometry.hpp"
#include "pidcon/random.hpp"
#include "pidcon/tensor.hpp"

namespace pidcon {

enum class Axis { X, Y };

inline std::string_view axis_name(Axis a) { return a == Axis::X ? "x" : "y"; }
inline Axis parse_axis(std::string_view s) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  throw ValidationError("unknown GP projection axis '" + std::string(s) + "'");
}

/// Unit-amplitude squared-exponential GP over one projected coordinate:
/// K(c, c') = exp(-(c - c')^2 / (2 l^2)).
struct GPSpec {
  double mean = 0.0;
  double length_scale = 1.0;
  Axis axis = Axis::X;
  double jitter = 1e-10;

  void validate() const {
    if (!(length_scale > 0.0)) throw ValidationError("gp: length_scale must be positive");
    if (!(jitter >= 0.0)) throw ValidationError("gp: jitter must be non-negative");
    if (!std::isfinite(mean)) throw ValidationError("gp: mean must be finite");
  }

  double project(double x, double y) const { return axis == Axis::X ? x : y; }
};

inline constexpr double kMaxJitter = 1e-4;

inline Tensor kernel_matrix(const GPSpec& spec, const Tensor& points) {
  spec.validate();
  const std::size_t n = points.rows();
  if (n < 1 || points.cols() != 2) throw ShapeError("kernel_matrix: points must be n x 2 with n >= 1");
  const double inv = 1.0 / (2.0 * spec.length_scale * spec.length_scale);
  Tensor k(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    const double ci = spec.project(points(i, 0), points(i, 1));
    k(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) {
      const double d = ci - spec.project(points(j, 0), points(j, 1));
      const double v = std::exp(-d * d * inv);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// One GP sample at `points`: mean + L z with L the lower Cholesky factor of
/// K + jitter I. Jitter escalates by 10x from the spec value (at least 1e-10
/// after the first failure) up to 1e-4 before giving up.
inline Tensor gp_draw(const GPSpec& spec, const Tensor& points, std::uint64_t seed) {
  const Tensor k = kernel_matrix(spec, points);
  const std::size_t n = k.rows();
  Eigen::MatrixXd km = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      k.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  double jitter = spec.jitter;
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (;;) {
    Eigen::MatrixXd a = km;
    a.diagonal().array() += jitter;
    llt.compute(a);
    if (llt.info() == Eigen::Success) break;
    jitter = std::max(jitter * 10.0, 1e-10);
    if (jitter > kMaxJitter * (1.0 + 1e-9)) {
      std::ostringstream os;
      os << "gp_draw: Cholesky failed for " << n << " points with jitter up to " << kMaxJitter
         << " (length_scale " << spec.length_scale << ")";
      throw NumericalError(os.str());
    }
  }
  CounterRng rng(seed);
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) z[static_cast<Eigen::Index>(i)] = rng.normal();
  const Eigen::VectorXd lz = llt.matrixL() * z;
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out[i] = spec.mean + lz[static_cast<Eigen::Index>(i)];
  return out;
}

/// A GP sample drawn on an evenly spaced knot grid along the projection axis
/// and read back by linear interpolation, so the same boundary function can be
/// evaluated at any point set (sampled boundary points, oracle grid nodes).
struct GpProfile {
  std::string name;
  GPSpec spec;
  std::vector<double> knots;
  std::vector<double> values;

  double at(double c) const {
    if (knots.size() == 1) return values.front();
    if (c <= knots.front()) return values.front();
    if (c >= knots.back()) return values.back();
    const auto it = std::upper_bound(knots.begin(), knots.end(), c);
    const std::size_t j = static_cast<std::size_t>(it - knots.begin());
    const double w = (c - knots[j - 1]) / (knots[j] - knots[j - 1]);
    return (1.0 - w) * values[j - 1] + w * values[j];
  }

  double operator()(Vec2 p) const { return at(spec.project(p.x, p.y)); }
};

inline GpProfile draw_profile(std::string name, const GPSpec& spec, double lo, double hi, std::size_t knots,
                              std::uint64_t seed) {
  if (knots < 2 || !(hi > lo)) throw ValidationError("gp profile: need >= 2 knots over a non-empty range");
  GpProfile p;
  p.name = std::move(name);
  p.spec = spec;
  Tensor pts(Shape{knots, 2});
  for (std::size_t i = 0; i < knots; ++i) {
    const double c = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(knots - 1);
    p.knots.push_back(c);
    pts(i, spec.axis == Axis::X ? 0 : 1) = c;
  }
  const Tensor v = gp_draw(spec, pts, seed);
  p.values.assign(v.data().begin(), v.data().end());
  return p;
}

}  // namespace pidcon
