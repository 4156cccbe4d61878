#include "croa/planner.hpp"

#include <cmath>
#include <optional>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

using namespace croa;

namespace {

ConvexPolytope box_at(const Vec2& c, double half_x, double half_y) {
  return polytope_from_vertices({c + Vec2(-half_x, -half_y),
                                 c + Vec2(half_x, -half_y),
                                 c + Vec2(half_x, half_y),
                                 c + Vec2(-half_x, half_y)});
}

// World with one square obstacle centered on the straight robot-target line.
WorldSnapshot blocked_world() {
  WorldSnapshot w;
  w.robot = State{0.0, 0.0, 0.0};
  w.target.mean = Vec2(30.0, 0.0);
  w.target.covariance = Eigen::Matrix2d::Identity();
  w.obstacles.push_back(box_at(Vec2(15.0, 0.0), 1.0, 1.0));
  return w;
}

// Corridor of six boxes flanking the straight line, which stays feasible.
WorldSnapshot corridor_world() {
  WorldSnapshot w;
  w.robot = State{0.0, 0.0, 0.0};
  w.target.mean = Vec2(40.0, 0.0);
  w.target.covariance = 0.5 * Eigen::Matrix2d::Identity();
  const Vec2 centers[6] = {{10.0, 3.0},  {14.0, -3.0}, {22.0, 3.0},
                           {26.0, -3.0}, {30.0, 3.0},  {34.0, -3.0}};
  for (const Vec2& c : centers) w.obstacles.push_back(box_at(c, 2.0, 1.0));
  return w;
}

ConvexPolytope ego_at(const WorldSnapshot& w, const State& s) {
  return transform(w.ego.body, s.heading, s.position());
}

double min_clearance(const WorldSnapshot& w, const State& s) {
  double best = std::numeric_limits<double>::infinity();
  const ConvexPolytope ego = ego_at(w, s);
  for (const auto& obs : w.obstacles)
    best = std::min(best, exact_distance(ego, obs));
  return best;
}

// Roll a closed loop: plan, execute the first control exactly, repeat.
template <typename Planner>
std::vector<State> closed_loop(WorldSnapshot w, const PlannerConfig& cfg,
                               int frames, Planner planner,
                               PlanResult* last = nullptr) {
  std::vector<State> executed{w.robot};
  std::optional<PlanResult> warm;
  for (int f = 0; f < frames; ++f) {
    PlanResult r = planner(w, warm ? &*warm : nullptr, cfg, f);
    w.robot = step(w.robot, r.trajectory.controls[0], cfg.dt, cfg.wheelbase);
    executed.push_back(w.robot);
    warm = std::move(r);
  }
  if (last != nullptr) *last = std::move(*warm);
  return executed;
}

bool traj_equal(const Trajectory& a, const Trajectory& b) {
  if (a.states.size() != b.states.size() ||
      a.controls.size() != b.controls.size())
    return false;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    if (a.states[i].x != b.states[i].x || a.states[i].y != b.states[i].y ||
        a.states[i].heading != b.states[i].heading)
      return false;
  }
  for (std::size_t i = 0; i < a.controls.size(); ++i) {
    if (a.controls[i].speed != b.controls[i].speed ||
        a.controls[i].steer != b.controls[i].steer)
      return false;
  }
  return true;
}

// Independent gate: projection of the obstacle center onto the segment
// p -> g strictly inside (0, 1).
bool gate(const Vec2& p, const Vec2& g, const Vec2& o) {
  const Vec2 d = g - p;
  const double len2 = d.squaredNorm();
  if (len2 < 1e-18) return false;
  const double t = d.dot(o - p) / len2;
  return t > 0.0 && t < 1.0;
}

}  // namespace

TEST_CASE("reference_waypoints: nominal spacing along the bearing") {
  PlannerConfig cfg;
  const Waypoints wp =
      reference_waypoints(State{0.0, 0.0, 0.0}, Vec2(10.0, 0.0), cfg);
  REQUIRE(wp.states.size() == 11);
  CHECK(wp.states[2].x == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(wp.states[2].y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(wp.states[2].heading == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reference_waypoints: clamp at a close target") {
  PlannerConfig cfg;
  const Waypoints wp =
      reference_waypoints(State{0.0, 0.0, 0.0}, Vec2(1.0, 0.0), cfg);
  for (int h = 1; h <= cfg.horizon; ++h) {
    CHECK(wp.states[h].x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(wp.states[h].y == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("reference_waypoints: random geometry stays on the segment") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  PlannerConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const State s{coord(rng), coord(rng), coord(rng) * 0.06};
    const Vec2 tgt(coord(rng), coord(rng));
    if ((tgt - s.position()).norm() < 1e-3) continue;
    const Waypoints wp = reference_waypoints(s, tgt, cfg);
    const Vec2 dir = (tgt - s.position()).normalized();
    for (int h = 0; h <= cfg.horizon; ++h) {
      const Vec2 rel = wp.states[h].position() - s.position();
      // collinear: zero cross product, non-negative advance, on the segment
      CHECK(std::abs(dir.x() * rel.y() - dir.y() * rel.x()) < 1e-9);
      CHECK(rel.dot(dir) >= -1e-12);
      CHECK(rel.norm() <= (tgt - s.position()).norm() + 1e-9);
      if (h > 0) {
        const double spacing =
            (wp.states[h].position() - wp.states[h - 1].position()).norm();
        CHECK(spacing <= cfg.nominal_speed * cfg.dt + 1e-9);
      }
    }
  }
}

TEST_CASE("reference_waypoints: degenerate target throws") {
  PlannerConfig cfg;
  CHECK_THROWS_AS(
      reference_waypoints(State{1.0, 2.0, 0.0}, Vec2(1.0, 2.0), cfg),
      DegenerateTarget);
}

TEST_CASE("tracking_cost: zero at the waypoints, unit offset scales with rho") {
  PlannerConfig cfg;
  const Waypoints wp =
      reference_waypoints(State{0.0, 0.0, 0.0}, Vec2(10.0, 0.0), cfg);
  Trajectory traj;
  traj.states = wp.states;
  CHECK(tracking_cost(traj, wp, cfg.rho) == doctest::Approx(0.0));
  traj.states[3].x += 1.0;
  CHECK(tracking_cost(traj, wp, 2.0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("tracking_cost: matches an independent summation") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(-5.0, 5.0);
  PlannerConfig cfg;
  const Waypoints wp =
      reference_waypoints(State{0.0, 0.0, 0.0}, Vec2(20.0, 5.0), cfg);
  for (int trial = 0; trial < 20; ++trial) {
    Trajectory traj;
    for (const State& s : wp.states) {
      traj.states.push_back(
          State{s.x + coord(rng), s.y + coord(rng), s.heading + coord(rng)});
    }
    double expect = 0.0;
    for (std::size_t h = 0; h < traj.states.size(); ++h) {
      const double dx = traj.states[h].x - wp.states[h].x;
      const double dy = traj.states[h].y - wp.states[h].y;
      double dh = traj.states[h].heading - wp.states[h].heading;
      dh = std::remainder(dh, 2.0 * M_PI);
      expect += dx * dx + dy * dy + dh * dh;
    }
    CHECK(tracking_cost(traj, wp, cfg.rho) ==
          doctest::Approx(cfg.rho * expect).epsilon(1e-9));
  }
}

TEST_CASE("plan_croa: no obstacles gives progress and zero occlusion") {
  WorldSnapshot w;
  w.robot = State{0.0, 0.0, 0.0};
  w.target.mean = Vec2(30.0, 0.0);
  w.target.covariance = Eigen::Matrix2d::Identity();
  PlannerConfig cfg;
  const PlanResult r = plan_croa(w, nullptr, cfg);
  const double d_start = (w.target.mean - w.robot.position()).norm();
  const double d_end =
      (w.target.mean - r.trajectory.states.back().position()).norm();
  CHECK(d_end < d_start);
  CHECK(r.occl_estimate == 0.0);
  CHECK(r.diagnostics.solver_ok);
}

TEST_CASE("plan_croa: breaks symmetry and beats the stay-on-line value") {
  WorldSnapshot w = blocked_world();
  PlannerConfig cfg;
  PlanResult last;
  const int frames = 25;
  const auto executed = closed_loop(
      w, cfg, frames,
      [](const WorldSnapshot& ws, const PlanResult* warm,
         const PlannerConfig& c, int f) { return plan_croa(ws, warm, c, f); },
      &last);

  // Stay-on-line comparison: where a line-following rollout ends up (it
  // brakes behind the obstacle), evaluated on the final frame's sample draw.
  const SampleSet samples =
      draw_samples(w.target, cfg.samples,
                   cfg.seed + static_cast<std::uint64_t>(frames - 1),
                   cfg.weight_mode);
  std::vector<OcclusionGeom> geoms;
  for (const auto& obs : w.obstacles) geoms.push_back(occlusion_geom(obs));
  const auto on_line_run = closed_loop(
      w, cfg, frames,
      [](const WorldSnapshot& ws, const PlanResult* warm,
         const PlannerConfig& c, int f) {
        return plan_pathfollow(ws, warm, c, f);
      });
  const double stay_value =
      occlusion_probability(on_line_run.back().position(), samples, geoms);

  CHECK(std::abs(executed.back().y) > 0.2);  // committed to one side
  CHECK(last.occl_estimate < stay_value);
  CHECK(stay_value > 0.9);  // the straight line really is blind here
}

TEST_CASE("plan_croa: corridor trace non-increasing and clearance audit") {
  const WorldSnapshot w = corridor_world();
  PlannerConfig cfg;
  const PlanResult r = plan_croa(w, nullptr, cfg);
  for (std::size_t i = 1; i < r.diagnostics.objective_trace.size(); ++i) {
    CHECK(r.diagnostics.objective_trace[i] <=
          r.diagnostics.objective_trace[i - 1] + 1e-6);
  }
  WorldSnapshot sim = w;
  const auto executed = closed_loop(
      sim, cfg, 20,
      [](const WorldSnapshot& ws, const PlanResult* warm,
         const PlannerConfig& c, int f) { return plan_croa(ws, warm, c, f); });
  for (const State& s : executed) {
    CHECK(min_clearance(w, s) >= cfg.d0 - 0.05);
  }
}

TEST_CASE("planner outputs satisfy control bounds exactly") {
  PlannerConfig cfg;
  const WorldSnapshot worlds[2] = {blocked_world(), corridor_world()};
  for (const WorldSnapshot& w : worlds) {
    for (const PlanResult& r :
         {plan_croa(w, nullptr, cfg), plan_ompc(w, nullptr, cfg),
          plan_tracking(w, nullptr, cfg), plan_pathfollow(w, nullptr, cfg)}) {
      for (const Control& u : r.trajectory.controls) {
        CHECK(u.speed >= cfg.bounds.min.speed);
        CHECK(u.speed <= cfg.bounds.max.speed);
        CHECK(u.steer >= cfg.bounds.min.steer);
        CHECK(u.steer <= cfg.bounds.max.steer);
      }
    }
  }
}

TEST_CASE("plan_croa: identical inputs give bitwise identical plans") {
  const WorldSnapshot w = blocked_world();
  PlannerConfig cfg;
  const PlanResult a = plan_croa(w, nullptr, cfg, 3);
  const PlanResult b = plan_croa(w, nullptr, cfg, 3);
  CHECK(traj_equal(a.trajectory, b.trajectory));
  CHECK(a.occl_estimate == b.occl_estimate);
  REQUIRE(a.slacks.xi.size() == b.slacks.xi.size());
  for (std::size_t i = 0; i < a.slacks.xi.size(); ++i) {
    CHECK(a.slacks.xi[i] == b.slacks.xi[i]);
    CHECK(a.slacks.w[i] == b.slacks.w[i]);
  }
}

TEST_CASE("Step B closed form is optimal among feasible (w, xi)") {
  const WorldSnapshot w = blocked_world();
  PlannerConfig cfg;
  const PlanResult r = plan_croa(w, nullptr, cfg, 0);
  const Vec2 p = r.trajectory.states.back().position();
  const SampleSet samples =
      draw_samples(w.target, cfg.samples, cfg.seed, cfg.weight_mode);
  std::vector<OcclusionGeom> geoms;
  for (const auto& obs : w.obstacles) geoms.push_back(occlusion_geom(obs));

  // Recompute the closed form with an independent gate.
  std::vector<double> xi_min(samples.size(), cfg.xi_floor);
  for (int i = 0; i < samples.size(); ++i) {
    for (const auto& geom : geoms) {
      if (!gate(p, samples.samples[i], geom.center)) continue;
      double tight = kXiCap;
      try {
        tight = xi_tight(p, samples.samples[i], geom);
      } catch (const OnSightLine&) {
      }
      xi_min[i] = std::max(xi_min[i], std::min(tight, kXiCap));
    }
  }
  double closed_form = 0.0;
  REQUIRE(static_cast<int>(r.slacks.xi.size()) == samples.size());
  for (int i = 0; i < samples.size(); ++i) {
    CHECK(r.slacks.xi[i] == doctest::Approx(xi_min[i]).epsilon(1e-12));
    CHECK(r.slacks.w[i] ==
          doctest::Approx(std::max(xi_min[i] - 1.0, 0.0)).epsilon(1e-12));
    closed_form += samples.weights[i] * r.slacks.w[i];
  }

  // No random feasible perturbation does better.
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> bump(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    double sum = 0.0;
    for (int i = 0; i < samples.size(); ++i) {
      const double xi = xi_min[i] + bump(rng);       // any feasible xi
      const double wi = std::max(xi - 1.0, 0.0) + bump(rng);  // any feasible w
      sum += samples.weights[i] * wi;
    }
    CHECK(sum >= closed_form - 1e-12);
  }
}

TEST_CASE("CCP tangency at the expansion point") {
  const WorldSnapshot w = blocked_world();
  PlannerConfig cfg;
  const SampleSet samples =
      draw_samples(w.target, 50, 99, WeightMode::Uniform);
  std::vector<OcclusionGeom> geoms;
  for (const auto& obs : w.obstacles) geoms.push_back(occlusion_geom(obs));
  const Vec2 expansion(8.0, -0.4);
  const auto cons = build_occlusion_constraints(expansion, samples, geoms);
  CHECK(!cons.empty());
  for (const auto& sc : cons) {
    const double truth =
        theta(expansion, samples.samples[sc.sample_index],
              geoms[sc.obstacle_index]);
    CHECK(std::abs(sc.theta_hat.value(expansion) - truth) < 1e-9);
  }
}

TEST_CASE("ompc_occlusion_proxy: disc on the sight line contributes one") {
  std::vector<OcclusionGeom> geoms{occlusion_geom(box_at(Vec2(15.0, 0.0),
                                                         1.0, 1.0))};
  const double proxy =
      ompc_occlusion_proxy(Vec2(0.0, 0.0), Vec2(30.0, 0.0), geoms);
  CHECK(proxy == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("narrow gap admissible to polytopes but not to the disc model") {
  WorldSnapshot w;
  w.obstacles.push_back(box_at(Vec2(15.0, 3.5), 2.3, 0.95));
  w.obstacles.push_back(box_at(Vec2(15.0, -3.5), 2.3, 0.95));
  const double d0 = 1.0;
  const State gap_pose{15.0, 0.0, 0.0};

  // Exact polytope clearance admits the gap with >= d0 on both sides.
  CHECK(min_clearance(w, gap_pose) >= d0);

  // The disc model (circumradius + inscribed ego radius) excludes it.
  const double r_ego = w.ego.body.offsets.minCoeff();
  for (const auto& obs : w.obstacles) {
    const OcclusionGeom geom = occlusion_geom(obs);
    const double needed = geom.radius + r_ego + d0;
    const double have = (gap_pose.position() - geom.center).norm();
    CHECK(have < needed);
  }
}

TEST_CASE("plan_ompc equals plan_croa when there are no obstacles") {
  WorldSnapshot w;
  w.robot = State{0.0, 0.0, 0.0};
  w.target.mean = Vec2(25.0, 5.0);
  w.target.covariance = Eigen::Matrix2d::Identity();
  PlannerConfig cfg;
  const PlanResult a = plan_croa(w, nullptr, cfg);
  const PlanResult b = plan_ompc(w, nullptr, cfg);
  REQUIRE(a.trajectory.states.size() == b.trajectory.states.size());
  for (std::size_t i = 0; i < a.trajectory.states.size(); ++i) {
    CHECK(a.trajectory.states[i].x ==
          doctest::Approx(b.trajectory.states[i].x).epsilon(1e-9));
    CHECK(a.trajectory.states[i].y ==
          doctest::Approx(b.trajectory.states[i].y).epsilon(1e-9));
  }
}

TEST_CASE("plan_tracking: objective is the pure tracking cost") {
  WorldSnapshot w = corridor_world();
  PlannerConfig cfg;
  const PlanResult r = plan_tracking(w, nullptr, cfg);
  const Waypoints wp = reference_waypoints(w.robot, w.target.mean, cfg);
  REQUIRE(!r.diagnostics.objective_trace.empty());
  CHECK(r.diagnostics.objective_trace.back() ==
        doctest::Approx(tracking_cost(r.trajectory, wp, cfg.rho))
            .epsilon(1e-12));
}

TEST_CASE("plan_tracking: obstacle off the path leaves it near-straight") {
  PlannerConfig cfg;
  WorldSnapshot off;
  off.robot = State{0.0, 0.0, 0.0};
  off.target.mean = Vec2(30.0, 0.0);
  off.target.covariance = Eigen::Matrix2d::Identity();
  off.obstacles.push_back(box_at(Vec2(15.0, 6.0), 1.0, 1.0));
  WorldSnapshot on = off;
  on.obstacles[0] = box_at(Vec2(15.0, 0.0), 1.0, 1.0);

  const Waypoints wp = reference_waypoints(off.robot, off.target.mean, cfg);
  const PlanResult r_off = plan_tracking(off, nullptr, cfg);
  const PlanResult r_on = plan_tracking(on, nullptr, cfg);
  const double err_off =
      (r_off.trajectory.states.back().position() -
       wp.states.back().position()).norm();
  const double err_on =
      (r_on.trajectory.states.back().position() -
       wp.states.back().position()).norm();
  CHECK(err_off < 0.2);       // near-straight
  CHECK(err_off < err_on);    // blocking obstacle costs tracking error
}

TEST_CASE("plan_pathfollow: clear path tracked within 0.2 m cross-track") {
  WorldSnapshot w;
  w.robot = State{0.0, 0.0, 0.0};
  w.target.mean = Vec2(40.0, 0.0);
  w.target.covariance = Eigen::Matrix2d::Identity();
  PlannerConfig cfg;
  const auto executed = closed_loop(
      w, cfg, 20,
      [](const WorldSnapshot& ws, const PlanResult* warm,
         const PlannerConfig& c, int f) {
        return plan_pathfollow(ws, warm, c, f);
      });
  for (const State& s : executed) CHECK(std::abs(s.y) < 0.2);
  CHECK(executed.back().x > 20.0);
}

TEST_CASE("plan_pathfollow: brakes behind a blocking obstacle") {
  WorldSnapshot w = blocked_world();
  PlannerConfig cfg;
  WorldSnapshot sim = w;
  std::optional<PlanResult> warm;
  State pose = sim.robot;
  double last_speed = 0.0;
  for (int f = 0; f < 40; ++f) {
    sim.robot = pose;
    const PlanResult r =
        plan_pathfollow(sim, warm ? &*warm : nullptr, cfg, f);
    last_speed = r.trajectory.controls[0].speed;
    pose = step(pose, r.trajectory.controls[0], cfg.dt, cfg.wheelbase);
    warm = r;
  }
  CHECK(last_speed == 0.0);
  const double clearance = min_clearance(w, pose);
  CHECK(clearance >= cfg.d0 - 1e-9);
  CHECK(clearance <= cfg.d0 + cfg.bounds.max.speed * cfg.dt + 1e-9);
}

TEST_CASE("plan_pathfollow: zero-length path stops immediately") {
  WorldSnapshot w;
  w.robot = State{5.0, 5.0, 0.3};
  w.target.mean = Vec2(5.0, 5.0);
  w.target.covariance = Eigen::Matrix2d::Identity();
  PlannerConfig cfg;
  const PlanResult r = plan_pathfollow(w, nullptr, cfg);
  for (const Control& u : r.trajectory.controls) CHECK(u.speed == 0.0);
  CHECK(r.trajectory.states.back().x == doctest::Approx(5.0));
  CHECK(r.trajectory.states.back().y == doctest::Approx(5.0));
}
