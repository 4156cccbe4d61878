#include "croa/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace croa {

namespace {

void check_lidar(const LidarConfig& lidar) {
  if (lidar.ray_count < 1)
    throw InvalidScenario("lidar ray_count must be >= 1");
  if (!(lidar.fov > 0.0) || lidar.fov > 2.0 * M_PI + 1e-12)
    throw InvalidScenario("lidar fov must lie in (0, 2*pi]");
  if (!(lidar.max_range > 0.0))
    throw InvalidScenario("lidar max_range must be positive");
}

PlanResult plan_with(PlannerKind kind, const WorldSnapshot& world,
                     const PlanResult* warm, const PlannerConfig& cfg,
                     int frame) {
  switch (kind) {
    case PlannerKind::Croa: return plan_croa(world, warm, cfg, frame);
    case PlannerKind::Ompc: return plan_ompc(world, warm, cfg, frame);
    case PlannerKind::Tracking: return plan_tracking(world, warm, cfg, frame);
    case PlannerKind::Pathfollow:
      return plan_pathfollow(world, warm, cfg, frame);
  }
  throw SimulatorError("unknown planner kind");
}

}  // namespace

int sense(const State& robot, const Scenario& scenario) {
  check_lidar(scenario.lidar);
  // Target body last so its index is known.
  std::vector<ConvexPolytope> bodies = scenario.obstacles;
  bodies.push_back(scenario.target_truth);
  const std::size_t target_index = bodies.size() - 1;

  const LidarConfig& lidar = scenario.lidar;
  const Vec2 origin = robot.position();
  int count = 0;
  for (int i = 0; i < lidar.ray_count; ++i) {
    const double bearing = robot.heading - 0.5 * lidar.fov +
                           (i + 0.5) * lidar.fov / lidar.ray_count;
    const Vec2 dir(std::cos(bearing), std::sin(bearing));
    const auto hit = ray_cast(origin, dir, bodies, lidar.max_range);
    if (hit && hit->poly_index == target_index) ++count;
  }
  return count;
}

Metrics aggregate(std::span<const FrameRecord> records) {
  if (records.empty()) throw SimulatorError("aggregate needs records");
  Metrics m;
  m.total_frames = static_cast<int>(records.size());
  m.min_clearance_overall = std::numeric_limits<double>::infinity();
  for (const FrameRecord& r : records) {
    m.point_count_series.push_back(r.target_points);
    if (r.detectable) ++m.detectable_frames;
    m.min_clearance_overall = std::min(m.min_clearance_overall,
                                       r.min_clearance);
  }
  m.occlusion_ratio =
      1.0 - static_cast<double>(m.detectable_frames) / m.total_frames;

  std::vector<int> sorted = m.point_count_series;
  std::sort(sorted.begin(), sorted.end());
  const int n = m.total_frames;
  m.mean_points =
      std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  m.median_points = n % 2 == 1
                        ? sorted[n / 2]
                        : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const int top = std::max(1, static_cast<int>(std::ceil(0.15 * n)));
  m.top15_points =
      std::accumulate(sorted.end() - top, sorted.end(), 0.0) / top;
  return m;
}

RunResult run(const Scenario& scenario, PlannerKind kind,
              const PlannerConfig& cfg, std::uint64_t seed) {
  check_lidar(scenario.lidar);

  PlannerConfig run_cfg = cfg;
  run_cfg.seed = seed;

  WorldSnapshot world;
  world.robot = scenario.robot_start;
  world.obstacles = scenario.obstacles;
  world.target = scenario.target_belief;
  world.ego = scenario.ego;

  RunResult out;
  std::optional<PlanResult> warm;
  const int max_frames =
      static_cast<int>(std::ceil(scenario.max_sim_time / run_cfg.dt));
  for (int f = 0; f < max_frames; ++f) {
    FrameRecord rec;
    Control u{0.0, 0.0};  // brake on planner failure
    try {
      PlanResult r = plan_with(kind, world, warm ? &*warm : nullptr,
                               run_cfg, f);
      u = r.trajectory.controls.front();
      rec.occl_estimate = r.occl_estimate;
      rec.solve_time = r.diagnostics.solve_time;
      rec.solver_ok = r.diagnostics.solver_ok;
      warm = std::move(r);
    } catch (const PlannerError&) {
      rec.solver_ok = false;
      warm.reset();
    }

    world.robot = step(world.robot, u, run_cfg.dt, run_cfg.wheelbase);
    rec.time = (f + 1) * run_cfg.dt;
    rec.robot = world.robot;
    rec.control = u;
    rec.target_points = sense(world.robot, scenario);
    rec.detectable = rec.target_points >= scenario.detect_threshold;

    const ConvexPolytope ego_world =
        transform(world.ego.body, world.robot.heading,
                  world.robot.position());
    double clearance = std::numeric_limits<double>::infinity();
    for (const auto& obs : scenario.obstacles)
      clearance = std::min(clearance, exact_distance(ego_world, obs));
    rec.min_clearance = clearance;
    out.records.push_back(rec);

    if ((world.robot.position() - scenario.target_belief.mean).norm() <=
        scenario.goal_radius) {
      break;
    }
  }

  out.metrics = aggregate(out.records);
  const FrameRecord& final_rec = out.records.back();
  if ((final_rec.robot.position() - scenario.target_belief.mean).norm() <=
      scenario.goal_radius) {
    out.metrics.time_to_target = final_rec.time;
  }
  return out;
}

}  // namespace croa
