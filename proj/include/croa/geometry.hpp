#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace croa {

using Vec2 = Eigen::Vector2d;

inline constexpr double kGeomTol = 1e-9;

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateInput : GeometryError {
  using GeometryError::GeometryError;
};
struct DegenerateLine : GeometryError {
  using GeometryError::GeometryError;
};

inline Eigen::Matrix2d rotation(double heading) {
  const double c = std::cos(heading), s = std::sin(heading);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

/// Bounded convex polygon in halfspace form A x <= b with unit-norm rows,
/// plus the matching CCW vertex list. Construct via polytope_from_vertices.
struct ConvexPolytope {
  Eigen::MatrixX2d normals;   // unit rows of A
  Eigen::VectorXd offsets;    // b, metric because normals are unit
  std::vector<Vec2> vertices; // counter-clockwise

  int num_faces() const { return static_cast<int>(normals.rows()); }
  bool contains(const Vec2& p, double tol = kGeomTol) const;
  Vec2 centroid() const; // area centroid
  double area() const;
};

ConvexPolytope polytope_from_vertices(std::span<const Vec2> points);

inline ConvexPolytope polytope_from_vertices(std::initializer_list<Vec2> pts) {
  return polytope_from_vertices(std::span<const Vec2>(pts.begin(), pts.size()));
}

ConvexPolytope transform(const ConvexPolytope& poly, double heading,
                         const Vec2& translation);

/// Euclidean minimum distance between two convex polygons; 0 when they
/// intersect. Brute force over vertex-edge pairs plus an intersection test.
double exact_distance(const ConvexPolytope& a, const ConvexPolytope& b);

struct RayHit {
  double distance = 0.0;
  std::size_t poly_index = 0;
};

std::optional<RayHit> ray_cast(const Vec2& origin, const Vec2& direction,
                               std::span<const ConvexPolytope> polys,
                               double max_range);

double circumradius(const ConvexPolytope& poly, const Vec2& center);

/// Perpendicular distance from p to the infinite line through z and o.
double point_to_sight_line_distance(const Vec2& p, const Vec2& z,
                                    const Vec2& o);

/// Disc summary of an obstacle used by the occlusion model: the area
/// centroid and the circumradius about it.
struct OcclusionGeom {
  Vec2 center;
  double radius = 0.0;
};

OcclusionGeom occlusion_geom(const ConvexPolytope& poly);

}  // namespace croa
