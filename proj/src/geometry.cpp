#include "croa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace croa {

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Squared distance from point p to segment [a, b].
double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-30) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

bool intersects(const ConvexPolytope& a, const ConvexPolytope& b) {
  // Separating axis test over both halfspace sets.
  for (int i = 0; i < a.num_faces(); ++i) {
    const Vec2 n = a.normals.row(i);
    double lo = std::numeric_limits<double>::infinity();
    for (const Vec2& v : b.vertices) lo = std::min(lo, n.dot(v));
    if (lo > a.offsets[i] + kGeomTol) return false;
  }
  for (int i = 0; i < b.num_faces(); ++i) {
    const Vec2 n = b.normals.row(i);
    double lo = std::numeric_limits<double>::infinity();
    for (const Vec2& v : a.vertices) lo = std::min(lo, n.dot(v));
    if (lo > b.offsets[i] + kGeomTol) return false;
  }
  return true;
}

}  // namespace

bool ConvexPolytope::contains(const Vec2& p, double tol) const {
  for (int i = 0; i < num_faces(); ++i) {
    if (normals.row(i).dot(p) > offsets[i] + tol) return false;
  }
  return true;
}

double ConvexPolytope::area() const {
  double a = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    a += cross2(vertices[i], vertices[(i + 1) % n]);
  }
  return 0.5 * a;
}

Vec2 ConvexPolytope::centroid() const {
  const std::size_t n = vertices.size();
  double a = 0.0;
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = vertices[i];
    const Vec2& q = vertices[(i + 1) % n];
    const double w = cross2(p, q);
    a += w;
    c += w * (p + q);
  }
  return c / (3.0 * a);
}

ConvexPolytope polytope_from_vertices(std::span<const Vec2> points) {
  if (points.size() < 3) throw DegenerateInput("need at least 3 points");

  // Andrew monotone chain, CCW output.
  std::vector<Vec2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) {
                          return (a - b).norm() < kGeomTol;
                        }),
            pts.end());
  if (pts.size() < 3) throw DegenerateInput("fewer than 3 distinct points");

  auto build = [&](std::vector<Vec2>& hull, auto begin, auto end) {
    for (auto it = begin; it != end; ++it) {
      while (hull.size() >= 2 &&
             cross2(hull.back() - hull[hull.size() - 2], *it - hull.back()) <=
                 kGeomTol) {
        hull.pop_back();
      }
      hull.push_back(*it);
    }
  };
  std::vector<Vec2> lower, upper;
  build(lower, pts.begin(), pts.end());
  build(upper, pts.rbegin(), pts.rend());
  lower.pop_back();
  upper.pop_back();
  lower.insert(lower.end(), upper.begin(), upper.end());
  if (lower.size() < 3) throw DegenerateInput("hull has zero area");

  ConvexPolytope poly;
  poly.vertices = std::move(lower);
  const int n = static_cast<int>(poly.vertices.size());
  poly.normals.resize(n, 2);
  poly.offsets.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const Vec2 edge = b - a;
    const Vec2 normal = Vec2(edge.y(), -edge.x()).normalized();
    poly.normals.row(i) = normal;
    poly.offsets[i] = normal.dot(a);
  }
  if (poly.area() < 1e-12) throw DegenerateInput("hull has zero area");
  return poly;
}

ConvexPolytope transform(const ConvexPolytope& poly, double heading,
                         const Vec2& translation) {
  const Eigen::Matrix2d r = rotation(heading);
  ConvexPolytope out;
  out.vertices.reserve(poly.vertices.size());
  for (const Vec2& v : poly.vertices) out.vertices.push_back(r * v + translation);
  // A' = A R^T, b' = b + A R^T t  so that A' x <= b'  <=>  A R^-1(x - t) <= b.
  out.normals = poly.normals * r.transpose();
  out.offsets = poly.offsets + out.normals * translation;
  return out;
}

double exact_distance(const ConvexPolytope& a, const ConvexPolytope& b) {
  if (intersects(a, b)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  const std::size_t na = a.vertices.size(), nb = b.vertices.size();
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      best = std::min(best, point_segment_dist(a.vertices[i], b.vertices[j],
                                               b.vertices[(j + 1) % nb]));
      best = std::min(best, point_segment_dist(b.vertices[j], a.vertices[i],
                                               a.vertices[(i + 1) % na]));
    }
  }
  return best;
}

std::optional<RayHit> ray_cast(const Vec2& origin, const Vec2& direction,
                               std::span<const ConvexPolytope> polys,
                               double max_range) {
  std::optional<RayHit> best;
  for (std::size_t idx = 0; idx < polys.size(); ++idx) {
    const ConvexPolytope& poly = polys[idx];
    double t_enter = 0.0;
    double t_exit = max_range;
    bool miss = false;
    for (int i = 0; i < poly.num_faces() && !miss; ++i) {
      const Vec2 n = poly.normals.row(i);
      const double denom = n.dot(direction);
      const double dist_to_plane = poly.offsets[i] - n.dot(origin);
      if (std::abs(denom) < 1e-15) {
        if (dist_to_plane < 0.0) miss = true;
      } else if (denom > 0.0) {
        t_exit = std::min(t_exit, dist_to_plane / denom);
      } else {
        t_enter = std::max(t_enter, dist_to_plane / denom);
      }
    }
    if (miss || t_enter > t_exit) continue;
    if (!best || t_enter < best->distance) best = RayHit{t_enter, idx};
  }
  return best;
}

double circumradius(const ConvexPolytope& poly, const Vec2& center) {
  double r = 0.0;
  for (const Vec2& v : poly.vertices) r = std::max(r, (v - center).norm());
  return r;
}

double point_to_sight_line_distance(const Vec2& p, const Vec2& z,
                                    const Vec2& o) {
  const Vec2 d = o - z;
  const double len = d.norm();
  if (len < kGeomTol) throw DegenerateLine("sight line endpoints coincide");
  return std::abs(d.x() * (p.y() - z.y()) - d.y() * (p.x() - z.x())) / len;
}

OcclusionGeom occlusion_geom(const ConvexPolytope& poly) {
  const Vec2 c = poly.centroid();
  return OcclusionGeom{c, circumradius(poly, c)};
}

}  // namespace croa
