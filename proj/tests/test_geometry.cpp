#include <algorithm>
#include <numbers>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace pidcon;

namespace {

double curve_distance(const GeometrySpec& g, BoundaryTag tag, Vec2 p) { return g.distance_to_tag(p, tag); }

}  // namespace

TEST(Pentagram, DefaultVertices) {
  const GeometrySpec g = build_pentagram();
  const auto& star = std::get<Polygon>(g.outer());
  ASSERT_EQ(star.vertices.size(), 10u);
  EXPECT_EQ(star.vertices[0].x, 0.0);
  EXPECT_EQ(star.vertices[0].y, 1.0);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(norm(star.vertices[k]), k % 2 ? 0.382 : 1.0, 1e-12);
  EXPECT_TRUE(g.has_tag(BoundaryTag::Outer));
  EXPECT_TRUE(g.has_tag(BoundaryTag::Hole));
}

TEST(Pentagram, RejectsDegenerateHole) {
  EXPECT_THROW(build_pentagram(1.0, 0.382, 0.0), ValidationError);
  EXPECT_THROW(build_pentagram(1.0, 0.382, 0.5), ValidationError);
  EXPECT_THROW(build_pentagram(1.0, 1.2, 0.2), ValidationError);
}

TEST(Pentagram, MonteCarloAreaMatchesShoelace) {
  const GeometrySpec g = build_pentagram();
  const Box b = g.bbox();
  const double box_area = (b.hi.x - b.lo.x) * (b.hi.y - b.lo.y);
  const double exact = geom::area(g.outer()) - std::numbers::pi * 0.2 * 0.2;
  EXPECT_GT(exact, 0.0);
  EXPECT_NEAR(g.area(), exact, 1e-12);
  CounterRng rng(7);
  const std::size_t n = 100000;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i)
    hits += g.contains({rng.uniform(b.lo.x, b.hi.x), rng.uniform(b.lo.y, b.hi.y)}) ? 1 : 0;
  const double fraction = static_cast<double>(hits) / static_cast<double>(n);
  EXPECT_LT(std::abs(fraction * box_area - exact) / exact, 0.01);
  EXPECT_LT(std::abs(fraction - exact / box_area), 0.02);
}

TEST(PointInStar, CentroidFarPointAndNotch) {
  const GeometrySpec g = build_pentagram();
  const auto& star = std::get<Polygon>(g.outer());
  EXPECT_TRUE(point_in_star({0.0, 0.0}, star));
  EXPECT_FALSE(point_in_star({0.0, 2.0}, star));
  // Midpoint of tips 0 and 2: inside the convex hull, outside the star.
  const Vec2 notch = 0.5 * (star.vertices[0] + star.vertices[2]);
  EXPECT_FALSE(point_in_star(notch, star));
  EXPECT_TRUE(point_in_star(0.5 * star.vertices[1], star));
}

TEST(Plate, DimensionsAndTags) {
  const GeometrySpec g = build_plate(20, 20, 5);
  const auto& hole = std::get<Circle>(g.curves[g.holes.at(0)]);
  EXPECT_EQ(hole.radius, 2.5);
  EXPECT_EQ(hole.center.x, 10.0);
  EXPECT_EQ(hole.center.y, 10.0);
  const PointSet left = sample_boundary(g, BoundaryTag::Left, 200, 1);
  const PointSet right = sample_boundary(g, BoundaryTag::Right, 200, 2);
  const PointSet tb = sample_boundary(g, BoundaryTag::TopBot, 400, 3);
  for (std::size_t i = 0; i < 200; ++i) {
    EXPECT_NEAR(left.coords(i, 0), 0.0, 1e-12);
    EXPECT_NEAR(right.coords(i, 0), 20.0, 1e-12);
  }
  std::size_t top = 0;
  for (std::size_t i = 0; i < 400; ++i) {
    const double y = tb.coords(i, 1);
    EXPECT_TRUE(std::abs(y) < 1e-12 || std::abs(y - 20.0) < 1e-12) << y;
    top += y > 10.0 ? 1 : 0;
  }
  EXPECT_GT(top, 150u);
  EXPECT_LT(top, 250u);
}

TEST(Plate, RejectsOversizedHole) {
  EXPECT_THROW(build_plate(20, 20, 25), ValidationError);
  EXPECT_THROW(build_plate(20, 20, 0), ValidationError);
}

TEST(Plate, InteriorSamplesRespectHoleAndEdges) {
  const PointSet ps = sample_interior(build_plate(), 5000, 11);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Vec2 p = ps.point(i);
    EXPECT_TRUE(p.x > 0 && p.x < 20 && p.y > 0 && p.y < 20);
    EXPECT_GT(norm(p - Vec2{10, 10}), 2.5);
  }
}

TEST(SampleBoundary, SinglePointOnCircle) {
  const GeometrySpec g = build_disk(1.5);
  const PointSet ps = sample_boundary(g, BoundaryTag::Outer, 1, 42);
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_NEAR(norm(ps.point(0)), 1.5, 1e-12);
  EXPECT_EQ(ps.tag, BoundaryTag::Outer);
}

TEST(SampleBoundary, Deterministic) {
  const GeometrySpec g = build_pentagram();
  EXPECT_EQ(sample_boundary(g, BoundaryTag::Outer, 50, 9).coords, sample_boundary(g, BoundaryTag::Outer, 50, 9).coords);
  EXPECT_NE(sample_boundary(g, BoundaryTag::Outer, 50, 9).coords, sample_boundary(g, BoundaryTag::Outer, 50, 10).coords);
}

TEST(SampleBoundary, UniformAngleOnUnitCircle) {
  const std::size_t m = 10000;
  const PointSet ps = sample_boundary(build_disk(1.0), BoundaryTag::Outer, m, 2024);
  double radius_err = 0.0;
  std::vector<double> u(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Vec2 p = ps.point(i);
    radius_err += std::abs(norm(p) - 1.0);
    double a = std::atan2(p.y, p.x);
    if (a < 0) a += 2 * std::numbers::pi;
    u[i] = a / (2 * std::numbers::pi);
  }
  EXPECT_LT(radius_err / m, 1e-12);
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    ks = std::max(ks, std::abs(u[i] - static_cast<double>(i) / m));
    ks = std::max(ks, std::abs(static_cast<double>(i + 1) / m - u[i]));
  }
  EXPECT_LT(ks, 0.02);
}

TEST(SampleBoundary, PointsLieOnTaggedCurves) {
  for (const GeometrySpec& g : {build_pentagram(), build_plate(), build_disk(2.0), build_rectangle(3.0, 1.0)}) {
    for (BoundaryTag tag : g.tags()) {
      const PointSet ps = sample_boundary(g, tag, 300, 5);
      for (std::size_t i = 0; i < ps.size(); ++i)
        EXPECT_LT(curve_distance(g, tag, ps.point(i)), 1e-9 * g.scale()) << g.name << " " << tag_name(tag);
    }
  }
}

TEST(SampleBoundary, UnknownTagIsRejected) {
  EXPECT_THROW(sample_boundary(build_disk(), BoundaryTag::Hole, 5, 1), ValidationError);
  EXPECT_THROW(sample_boundary(build_disk(), BoundaryTag::Outer, 0, 1), ValidationError);
}

TEST(SampleInterior, MembershipAndDeterminism) {
  for (const GeometrySpec& g : {build_pentagram(), build_plate(), build_disk(), build_rectangle()}) {
    const PointSet a = sample_interior(g, 3000, 77);
    const PointSet b = sample_interior(g, 3000, 77);
    EXPECT_EQ(a.coords, b.coords);
    EXPECT_EQ(a.tag, BoundaryTag::Interior);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(g.contains(a.point(i))) << g.name;
  }
}

TEST(Geometry, SegmentsPartitionCurves) {
  for (const GeometrySpec& g : {build_pentagram(), build_plate(), build_disk(), build_rectangle()}) {
    for (std::size_t c = 0; c < g.curves.size(); ++c) {
      double covered = 0.0;
      for (const auto& s : g.segments)
        for (const auto& r : s.ranges)
          if (r.curve == c) covered += r.t1 - r.t0;
      EXPECT_NEAR(covered, 1.0, 1e-12) << g.name << " curve " << c;
    }
  }
}

TEST(Geometry, PlateEdgesCarryTheirTags) {
  const GeometrySpec g = build_plate();
  auto tag_of = [&](Vec2 p) { return g.tag_at(0, geom::param_of(g.outer(), p)); };
  EXPECT_EQ(tag_of({0.0, 7.0}), BoundaryTag::Left);
  EXPECT_EQ(tag_of({20.0, 13.0}), BoundaryTag::Right);
  EXPECT_EQ(tag_of({5.0, 0.0}), BoundaryTag::TopBot);
  EXPECT_EQ(tag_of({15.0, 20.0}), BoundaryTag::TopBot);
}

TEST(Geometry, FirstCrossingHitsNearestCurve) {
  const GeometrySpec g = build_plate();
  const auto hit = g.first_crossing({5.0, 10.0}, {-1.0, 10.0});
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->point.x, 0.0, 1e-12);
  EXPECT_EQ(hit->tag, BoundaryTag::Left);
  const auto hole = g.first_crossing({5.0, 10.0}, {10.0, 10.0});
  ASSERT_TRUE(hole);
  EXPECT_NEAR(hole->point.x, 7.5, 1e-12);
  EXPECT_EQ(hole->tag, BoundaryTag::Hole);
  EXPECT_FALSE(g.first_crossing({5.0, 10.0}, {6.0, 10.0}));
}

TEST(CoordinateMap, RoundTripAndUnitBox) {
  const GeometrySpec g = build_plate();
  const CoordinateMap map = g.normalizer();
  const Tensor x = sample_interior(g, 500, 3).coords;
  const Tensor xi = map.to_normalized(x);
  for (double v : xi.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_LT(pidcon::testing::max_abs_diff(map.to_physical(xi), x), 1e-12);
  const Tensor corners = map.to_normalized(Tensor::matrix({{0, 0}, {20, 20}}));
  EXPECT_EQ(corners, Tensor::matrix({{-1, -1}, {1, 1}}));
}

TEST(Tags, NamesRoundTrip) {
  for (BoundaryTag t : {BoundaryTag::Hole, BoundaryTag::Outer, BoundaryTag::Left, BoundaryTag::Right,
                        BoundaryTag::TopBot, BoundaryTag::Interior})
    EXPECT_EQ(parse_tag(tag_name(t)), t);
  EXPECT_THROW(parse_tag("SIDEWAYS"), ValidationError);
}
