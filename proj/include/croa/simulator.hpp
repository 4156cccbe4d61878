#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "croa/planner.hpp"

namespace croa {

struct SimulatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidScenario : SimulatorError {
  using SimulatorError::SimulatorError;
};

/// Planar lidar analog: rays fanned uniformly over the field of view
/// centered on the robot heading.
struct LidarConfig {
  int ray_count = 360;
  double fov = 2.0 * 3.14159265358979323846;  // radians
  double max_range = 40.0;                    // meters
  double rate = 10.0;                         // Hz, informational
};

struct Scenario {
  std::vector<ConvexPolytope> obstacles;
  ConvexPolytope target_truth;   // the sensed body
  GaussianTarget target_belief;  // what the planner sees
  State robot_start;
  EgoShape ego = ego_box(4.6, 1.75, 0.9);
  LidarConfig lidar;
  double max_sim_time = 30.0;  // seconds
  double goal_radius = 3.0;    // meters
  int detect_threshold = 10;   // lidar points for "detectable"
  // Per-seed obstacle jitter amplitude (uniform in [-a, a] per axis),
  // applied by the experiment runner, not by run() itself.
  double perturb_x = 0.0;  // meters
  double perturb_y = 0.0;  // meters
};

enum class PlannerKind { Croa, Ompc, Tracking, Pathfollow };

struct FrameRecord {
  double time = 0.0;  // seconds, at the end of the step
  State robot;
  Control control;
  int target_points = 0;
  bool detectable = false;
  double occl_estimate = 0.0;
  double min_clearance = 0.0;  // exact polytope distance to nearest obstacle
  double solve_time = 0.0;
  bool solver_ok = true;
};

struct Metrics {
  int detectable_frames = 0;
  int total_frames = 0;
  double occlusion_ratio = 0.0;
  std::vector<int> point_count_series;
  std::optional<double> time_to_target;  // seconds
  double min_clearance_overall = 0.0;
  double mean_points = 0.0;
  double median_points = 0.0;
  double top15_points = 0.0;  // mean of the top 15% frame point counts
};

struct RunResult {
  Metrics metrics;
  std::vector<FrameRecord> records;
};

/// Number of lidar rays whose first hit (obstacles plus target body) is the
/// target within max_range.
int sense(const State& robot, const Scenario& scenario);

/// Closed loop: plan, execute the first control exactly, sense, log.
/// Deterministic given (scenario, kind, cfg, seed). Planner failures are
/// recorded and the robot brakes for that frame.
RunResult run(const Scenario& scenario, PlannerKind kind,
              const PlannerConfig& cfg, std::uint64_t seed);

Metrics aggregate(std::span<const FrameRecord> records);

}  // namespace croa
