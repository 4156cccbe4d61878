// Test-only oracles, independent of the library implementation paths they
// check.
#pragma once

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "croa/geometry.hpp"
#include "croa/occlusion.hpp"

namespace croa::test {

// ---------------------------------------------------------------------------
// GJK distance between convex polygons (support-function formulation).

inline Vec2 support(const ConvexPolytope& p, const Vec2& dir) {
  Vec2 best = p.vertices.front();
  double best_dot = best.dot(dir);
  for (const Vec2& v : p.vertices) {
    const double d = v.dot(dir);
    if (d > best_dot) {
      best_dot = d;
      best = v;
    }
  }
  return best;
}

inline Vec2 closest_on_segment(const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-30) return a;
  const double t = std::clamp(-a.dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

// Distance from the origin to the Minkowski difference a - b, computed by
// hulling the full difference point cloud (quadratic but exact).
inline double gjk_distance(const ConvexPolytope& a, const ConvexPolytope& b) {
  std::vector<Vec2> pts;
  for (const Vec2& va : a.vertices)
    for (const Vec2& vb : b.vertices) pts.push_back(va - vb);

  // Monotone-chain hull, written out here so the oracle shares no code with
  // the library's hull routine.
  std::sort(pts.begin(), pts.end(), [](const Vec2& u, const Vec2& v) {
    return u.x() < v.x() || (u.x() == v.x() && u.y() < v.y());
  });
  auto cross = [](const Vec2& o, const Vec2& p, const Vec2& q) {
    return (p.x() - o.x()) * (q.y() - o.y()) -
           (p.y() - o.y()) * (q.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Vec2& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0.0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);  // last point repeats the first

  // Origin inside (hull is counter-clockwise) -> the sets intersect.
  bool inside = true;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2& p = hull[i];
    const Vec2& q = hull[(i + 1) % hull.size()];
    if (cross(p, q, Vec2::Zero()) < 0.0) {
      inside = false;
      break;
    }
  }
  if (inside) return 0.0;

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2 c =
        closest_on_segment(hull[i], hull[(i + 1) % hull.size()]);
    best = std::min(best, c.norm());
  }
  return best;
}

// ---------------------------------------------------------------------------
// Random geometry helpers.

inline ConvexPolytope random_polytope(std::mt19937& rng, const Vec2& center,
                                      double scale, int points = 8) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<Vec2> pts;
  for (int i = 0; i < points; ++i) {
    pts.push_back(center + Vec2(u(rng), u(rng)));
  }
  try {
    return polytope_from_vertices(pts);
  } catch (const GeometryError&) {
    return random_polytope(rng, center, scale, points);
  }
}

// ---------------------------------------------------------------------------
// Dense-grid integration of the expected occlusion probability.

inline double grid_occlusion_probability(const Vec2& p,
                                         const GaussianTarget& target,
                                         std::span<const OcclusionGeom> geoms,
                                         double half_extent, double step) {
  const Eigen::Matrix2d cov_inv = target.covariance.inverse();
  const double det = target.covariance.determinant();
  const double norm = 1.0 / (2.0 * M_PI * std::sqrt(det));
  double prob = 0.0;
  for (double gx = -half_extent + 0.5 * step; gx < half_extent; gx += step) {
    for (double gy = -half_extent + 0.5 * step; gy < half_extent; gy += step) {
      const Vec2 z = target.mean + Vec2(gx, gy);
      bool occ = false;
      for (const OcclusionGeom& geom : geoms) {
        if (occluded(p, z, geom)) {
          occ = true;
          break;
        }
      }
      if (!occ) continue;
      const Vec2 d = z - target.mean;
      prob += norm * std::exp(-0.5 * d.dot(cov_inv * d)) * step * step;
    }
  }
  return prob;
}

}  // namespace croa::test
