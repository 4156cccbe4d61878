#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "croa/collision.hpp"
#include "croa/dynamics.hpp"
#include "croa/geometry.hpp"
#include "croa/occlusion.hpp"

namespace croa {

struct PlannerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateTarget : PlannerError {
  using PlannerError::PlannerError;
};
struct InfeasibleStart : PlannerError {
  using PlannerError::PlannerError;
};

struct PlannerConfig {
  double rho = 0.1;                       // tracking weight
  int horizon = 10;                       // H
  double dt = 0.3;                        // seconds
  int samples = 100;                      // M
  double d0 = 1.0;                        // clearance, meters
  ControlBounds bounds;
  int ccp_iters = 3;
  int alt_iters = 3;
  double penalty_occlusion = 50.0;        // sigma
  double penalty_collision_slack = 1000.0;
  double xi_floor = kXiFloor;
  double nominal_speed = 5.0;             // m/s, for the waypoint line
  std::uint64_t seed = 0;
  double wheelbase = 2.87;                // meters
  WeightMode weight_mode = WeightMode::DensityWeighted;
  bool hard_occlusion_constraints = false;
  bool xi_in_step_a = true;
  // Per-step cap on |heading - reference heading| inside one plan call. The
  // dual collision bound is exact under translation but frozen at the
  // reference heading, so the cap limits rotation-induced clearance error.
  double heading_trust_region = 0.4;
  // Extra clearance demanded inside the subproblem (on top of d0) to absorb
  // the rotation error the heading trust region still admits.
  double collision_margin = 0.1;
};

struct WorldSnapshot {
  State robot;
  std::vector<ConvexPolytope> obstacles;
  GaussianTarget target;
  EgoShape ego = ego_box(4.6, 1.75, 0.9);
};

struct PlanDiagnostics {
  int ccp_iterations = 0;
  int alt_iterations = 0;
  std::vector<double> objective_trace;  // merged objective, non-increasing
  double solve_time = 0.0;              // seconds
  double max_dual_residual = 0.0;       // stationarity residual at reference
  bool solver_ok = true;
};

struct PlanResult {
  Trajectory trajectory;
  OcclusionSlack slacks;
  double occl_estimate = 0.0;
  std::vector<DualPair> duals;
  PlanDiagnostics diagnostics;
};

struct Waypoints {
  std::vector<State> states;  // H+1 entries on the straight line to target
};

Waypoints reference_waypoints(const State& s, const Vec2& target_mean,
                              const PlannerConfig& cfg);

double tracking_cost(const Trajectory& traj, const Waypoints& waypoints,
                     double rho);

/// Smooth disc-model occlusion proxy used by the OMPC baseline: each obstacle
/// contributes exp(-dist(p, mean, o_k)^2 / (2 R_k^2)) when it lies between
/// the robot and the target mean.
double ompc_occlusion_proxy(const Vec2& p, const Vec2& target_mean,
                            std::span<const OcclusionGeom> geoms);

PlanResult plan_croa(const WorldSnapshot& world, const PlanResult* warm,
                     const PlannerConfig& cfg, int frame = 0);
PlanResult plan_ompc(const WorldSnapshot& world, const PlanResult* warm,
                     const PlannerConfig& cfg, int frame = 0);
PlanResult plan_tracking(const WorldSnapshot& world, const PlanResult* warm,
                         const PlannerConfig& cfg, int frame = 0);
PlanResult plan_pathfollow(const WorldSnapshot& world, const PlanResult* warm,
                           const PlannerConfig& cfg, int frame = 0);

}  // namespace croa
