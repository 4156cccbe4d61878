#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "croa/geometry.hpp"

namespace croa {

struct OcclusionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotPositiveDefinite : OcclusionError {
  using OcclusionError::OcclusionError;
};
struct DegenerateGeometry : OcclusionError {
  using OcclusionError::OcclusionError;
};
struct OnSightLine : OcclusionError {
  using OcclusionError::OcclusionError;
};

inline constexpr double kXiFloor = 1e-6;
inline constexpr double kXiCap = 1e6;

struct GaussianTarget {
  Vec2 mean = Vec2::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
};

/// Weighted Monte-Carlo draw from the target distribution.
struct SampleSet {
  std::vector<Vec2> samples;    // g_i
  std::vector<double> weights;  // Q_i, nonnegative, sums to 1
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(samples.size()); }
};

enum class WeightMode {
  /// Q_i proportional to the target pdf at g_i (self-weighted estimator).
  DensityWeighted,
  /// Q_i = 1/M (plain Monte-Carlo average).
  Uniform,
};

SampleSet draw_samples(const GaussianTarget& target, int count,
                       std::uint64_t seed,
                       WeightMode mode = WeightMode::DensityWeighted);

/// Ground-truth occlusion predicate: the obstacle disc shadows the robot at p
/// from the target sample z, and the obstacle lies between them.
bool occluded(const Vec2& p, const Vec2& z, const OcclusionGeom& geom);

double occlusion_probability(const Vec2& p, const SampleSet& samples,
                             std::span<const OcclusionGeom> geoms);

/// Tight value of the slack xi: R^2 ||p-g||^2 / (||o-g||^2 dist^2).
double xi_tight(const Vec2& p, const Vec2& g, const OcclusionGeom& geom);

/// Concave occlusion term: -||o-g||^2 dist^2(p, g, o). Quadratic in p.
double theta(const Vec2& p, const Vec2& g, const OcclusionGeom& geom);

Vec2 theta_gradient(const Vec2& p, const Vec2& g, const OcclusionGeom& geom);

/// Affine scalar function of the robot position.
struct AffineScalar {
  Vec2 gradient = Vec2::Zero();
  double offset = 0.0;

  double value(const Vec2& p) const { return gradient.dot(p) + offset; }
};

/// Tangent over-estimator of theta at the expansion point.
AffineScalar theta_linearized(const Vec2& expansion_p, const Vec2& g,
                              const OcclusionGeom& geom);

/// One surrogate cone constraint: R^2 ||p-g||^2 <= xi * (-theta_hat(p)).
struct SurrogateConstraint {
  int sample_index = 0;
  int obstacle_index = 0;
  double radius = 0.0;
  Vec2 sample = Vec2::Zero();
  AffineScalar theta_hat;
};

struct OcclusionSlack {
  std::vector<double> w;
  std::vector<double> xi;
};

/// Surrogate constraints for every (sample, obstacle) pair whose obstacle
/// passes the betweenness gate at the expansion point.
std::vector<SurrogateConstraint> build_occlusion_constraints(
    const Vec2& expansion_p, const SampleSet& samples,
    std::span<const OcclusionGeom> geoms);

}  // namespace croa
