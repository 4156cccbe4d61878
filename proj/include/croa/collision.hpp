#pragma once

#include <Eigen/Core>
#include <span>
#include <stdexcept>
#include <vector>

#include "croa/conic.hpp"
#include "croa/dynamics.hpp"
#include "croa/geometry.hpp"

namespace croa {

struct CollisionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverFailure : CollisionError {
  using CollisionError::CollisionError;
};
struct StaleDuals : CollisionError {
  using CollisionError::CollisionError;
};

/// Ego body in the body frame (origin at the rear-axle center).
struct EgoShape {
  ConvexPolytope body;
};

EgoShape ego_box(double length, double width, double rear_overhang);

/// World-frame halfspace description G x <= g of the ego body at a pose.
struct EgoHalfspaces {
  Eigen::MatrixX2d G;
  Eigen::VectorXd g;
};

EgoHalfspaces ego_halfspaces(const EgoShape& shape, const State& s);

/// Dual certificate of polytope separation: value equals the minimum
/// distance when the sets are disjoint, <= 0 when they intersect.
struct DualPair {
  Eigen::VectorXd lambda;  // obstacle faces
  Eigen::VectorXd mu;      // ego faces
  double value = 0.0;
  double stationarity_residual = 0.0;  // ||mu' G + lambda' H||
};

DualPair solve_dual(const EgoHalfspaces& ego, const ConvexPolytope& obstacle);

/// Affine clearance constraint in the step position p_h:
///   coeff . p_h + offset >= d0.
struct CollisionConstraint {
  int obstacle_index = 0;
  int step_index = 0;  // 1..H
  Vec2 coeff = Vec2::Zero();
  double offset = 0.0;
  double reference_value = 0.0;  // dual objective at the reference

  double margin(const Vec2& p) const { return coeff.dot(p) + offset; }
};

/// Constraints (one per obstacle and horizon step h = 1..H) from duals solved
/// at the reference trajectory, with the heading frozen at the reference.
std::vector<CollisionConstraint> linearized_collision_constraints(
    std::span<const DualPair> duals, const Trajectory& reference,
    const EgoShape& shape, std::span<const ConvexPolytope> obstacles,
    double d0);

}  // namespace croa
