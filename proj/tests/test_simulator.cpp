#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "croa/simulator.hpp"
#include "doctest.h"

namespace {

using namespace croa;

ConvexPolytope box_at(double cx, double cy, double hx, double hy) {
  return polytope_from_vertices({Vec2(cx - hx, cy - hy), Vec2(cx + hx, cy - hy),
                                 Vec2(cx + hx, cy + hy),
                                 Vec2(cx - hx, cy + hy)});
}

Scenario basic_scenario(double target_x) {
  Scenario sc;
  // Car-sized body seen broadside: wide enough to clear the 10-point
  // detect threshold from 20 m under a 360-ray fan.
  sc.target_truth = box_at(target_x, 0.0, 0.95, 2.3);
  sc.target_belief.mean = Vec2(target_x, 0.0);
  sc.target_belief.covariance = Eigen::Matrix2d::Identity();
  sc.robot_start = State{0.0, 0.0, 0.0};
  return sc;
}

// Independent oracle for sense(): the angular interval subtended by a convex
// polygon seen from the origin of the ray fan.  A ray whose bearing falls in
// that interval hits the body, provided nothing sits in front and the body is
// within range.
struct AngleInterval {
  double lo = 0.0;
  double hi = 0.0;
};

AngleInterval subtended(const Vec2& eye, const ConvexPolytope& poly) {
  double lo = 1e9, hi = -1e9;
  for (const auto& v : poly.vertices) {
    const Vec2 d = v - eye;
    const double a = std::atan2(d.y(), d.x());
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  return {lo, hi};
}

int oracle_ray_count(const State& robot, const LidarConfig& lidar,
                     double angle_lo, double angle_hi) {
  int count = 0;
  for (int i = 0; i < lidar.ray_count; ++i) {
    const double bearing = robot.heading - lidar.fov / 2.0 +
                           (i + 0.5) * lidar.fov / lidar.ray_count;
    const double a = wrap_angle(bearing);
    if (a >= angle_lo && a <= angle_hi) ++count;
  }
  return count;
}

PlannerConfig fast_cfg() {
  PlannerConfig cfg;
  cfg.samples = 40;
  return cfg;
}

}  // namespace

TEST_CASE("sense matches the angle-interval oracle in free space") {
  Scenario sc = basic_scenario(20.0);
  const auto iv = subtended(sc.robot_start.position(), sc.target_truth);
  const int oracle =
      oracle_ray_count(sc.robot_start, sc.lidar, iv.lo, iv.hi);
  const int got = sense(sc.robot_start, sc);
  CHECK(got == oracle);
  CHECK(got > sc.detect_threshold);  // a 2 m body at 20 m under 360 rays
}

TEST_CASE("sense returns zero when an obstacle covers the target sector") {
  Scenario sc = basic_scenario(20.0);
  sc.obstacles.push_back(box_at(10.0, 0.0, 1.0, 4.0));  // wall in front
  CHECK(sense(sc.robot_start, sc) == 0);
}

TEST_CASE("sense on a half-covered target matches the oracle within one ray") {
  Scenario sc = basic_scenario(20.0);
  // Obstacle covering everything at and above bearing 0, closer than the
  // target: the visible sector is exactly the target's lower angular half.
  sc.obstacles.push_back(box_at(10.0, 6.0, 1.0, 6.0));
  const auto iv = subtended(sc.robot_start.position(), sc.target_truth);
  const auto cover = subtended(sc.robot_start.position(), sc.obstacles[0]);
  const double vis_hi = std::min(iv.hi, cover.lo);
  const int expected =
      oracle_ray_count(sc.robot_start, sc.lidar, iv.lo, vis_hi);
  const int full = oracle_ray_count(sc.robot_start, sc.lidar, iv.lo, iv.hi);
  const int got = sense(sc.robot_start, sc);
  CHECK(std::abs(got - expected) <= 1);
  CHECK(got < full);
  CHECK(got > 0);
}

TEST_CASE("sense returns zero beyond max range") {
  Scenario sc = basic_scenario(60.0);  // beyond the 40 m range
  CHECK(sense(sc.robot_start, sc) == 0);
}

TEST_CASE("sense is monotone: removing an obstacle never decreases points") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(4.0, 18.0), uy(-6.0, 6.0),
      uh(0.4, 2.0);
  for (int trial = 0; trial < 25; ++trial) {
    Scenario sc = basic_scenario(20.0);
    for (int k = 0; k < 3; ++k)
      sc.obstacles.push_back(box_at(ux(rng), uy(rng), uh(rng), uh(rng)));
    const int with_all = sense(sc.robot_start, sc);
    for (std::size_t drop = 0; drop < sc.obstacles.size(); ++drop) {
      Scenario fewer = sc;
      fewer.obstacles.erase(fewer.obstacles.begin() +
                            static_cast<std::ptrdiff_t>(drop));
      CHECK(sense(fewer.robot_start, fewer) >= with_all);
    }
  }
}

TEST_CASE("aggregate arithmetic on the [0,0,10,20] series") {
  std::vector<FrameRecord> recs(4);
  const int pts[4] = {0, 0, 10, 20};
  for (int i = 0; i < 4; ++i) {
    recs[i].target_points = pts[i];
    recs[i].detectable = pts[i] >= 10;
    recs[i].min_clearance = 5.0 - i;
  }
  const Metrics m = aggregate(recs);
  CHECK(m.total_frames == 4);
  CHECK(m.detectable_frames == 2);
  CHECK(m.occlusion_ratio == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.mean_points == doctest::Approx(7.5));
  CHECK(m.median_points == doctest::Approx(5.0));
  CHECK(m.top15_points == doctest::Approx(20.0));  // ceil(0.15*4)=1 frame
  CHECK(m.min_clearance_overall == doctest::Approx(2.0));
}

TEST_CASE("aggregate with every frame detectable gives ratio zero") {
  std::vector<FrameRecord> recs(6);
  for (auto& r : recs) {
    r.target_points = 42;
    r.detectable = true;
  }
  CHECK(aggregate(recs).occlusion_ratio == doctest::Approx(0.0));
}

TEST_CASE("aggregate matches an independent statistics computation") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> up(0, 80);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 50);
    std::vector<FrameRecord> recs(static_cast<std::size_t>(n));
    std::vector<int> pts;
    int det = 0;
    for (auto& r : recs) {
      r.target_points = up(rng);
      r.detectable = r.target_points >= 10;
      r.min_clearance = 1.0 + 0.01 * up(rng);
      pts.push_back(r.target_points);
      det += r.detectable ? 1 : 0;
    }
    const Metrics m = aggregate(recs);
    CHECK(m.detectable_frames == det);
    CHECK(m.occlusion_ratio ==
          doctest::Approx(1.0 - double(det) / n).epsilon(1e-12));
    const double mean =
        std::accumulate(pts.begin(), pts.end(), 0.0) / pts.size();
    CHECK(m.mean_points == doctest::Approx(mean).epsilon(1e-12));
    std::vector<int> sorted = pts;
    std::sort(sorted.begin(), sorted.end());
    const double median =
        n % 2 ? double(sorted[n / 2])
              : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    CHECK(m.median_points == doctest::Approx(median).epsilon(1e-12));
    const int top = std::max(1, static_cast<int>(std::ceil(0.15 * n)));
    const double top15 =
        std::accumulate(sorted.end() - top, sorted.end(), 0.0) / top;
    CHECK(m.top15_points == doctest::Approx(top15).epsilon(1e-12));
  }
}

TEST_CASE("aggregate rejects an empty record list") {
  CHECK_THROWS_AS(aggregate({}), SimulatorError);
}

TEST_CASE("invalid lidar configuration is rejected") {
  Scenario sc = basic_scenario(20.0);
  sc.lidar.ray_count = 0;
  CHECK_THROWS_AS(run(sc, PlannerKind::Tracking, fast_cfg(), 0),
                  InvalidScenario);
  sc.lidar.ray_count = 360;
  sc.lidar.fov = 0.0;
  CHECK_THROWS_AS(run(sc, PlannerKind::Tracking, fast_cfg(), 0),
                  InvalidScenario);
}

TEST_CASE("free-space run: no occlusion, arrival near distance over speed") {
  Scenario sc = basic_scenario(20.0);
  const PlannerConfig cfg = fast_cfg();
  const RunResult rr = run(sc, PlannerKind::Tracking, cfg, 1);
  CHECK(rr.metrics.occlusion_ratio == doctest::Approx(0.0));
  REQUIRE(rr.metrics.time_to_target.has_value());
  const double dist = 20.0;
  const double lo = (dist - sc.goal_radius) / cfg.nominal_speed;
  CHECK(*rr.metrics.time_to_target >= lo - 0.5);
  CHECK(*rr.metrics.time_to_target <= dist / cfg.nominal_speed + 2.0);

  SUBCASE("detectable flag is consistent with the threshold on every frame") {
    for (const auto& r : rr.records)
      CHECK(r.detectable == (r.target_points >= sc.detect_threshold));
  }

  SUBCASE("closed-loop states equal the exact rollout of logged controls") {
    std::vector<Control> controls;
    for (const auto& r : rr.records) controls.push_back(r.control);
    const Trajectory replay =
        rollout(sc.robot_start, controls, cfg.dt, cfg.wheelbase);
    REQUIRE(replay.states.size() == rr.records.size() + 1);
    for (std::size_t i = 0; i < rr.records.size(); ++i) {
      CHECK(rr.records[i].robot.x == replay.states[i + 1].x);
      CHECK(rr.records[i].robot.y == replay.states[i + 1].y);
      CHECK(rr.records[i].robot.heading == replay.states[i + 1].heading);
    }
  }
}

TEST_CASE("same seed reproduces the run bit for bit") {
  Scenario sc = basic_scenario(30.0);
  sc.obstacles.push_back(box_at(15.0, 0.0, 1.0, 1.0));
  const PlannerConfig cfg = fast_cfg();
  const RunResult a = run(sc, PlannerKind::Croa, cfg, 3);
  const RunResult b = run(sc, PlannerKind::Croa, cfg, 3);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].robot.x == b.records[i].robot.x);
    CHECK(a.records[i].robot.y == b.records[i].robot.y);
    CHECK(a.records[i].robot.heading == b.records[i].robot.heading);
    CHECK(a.records[i].control.speed == b.records[i].control.speed);
    CHECK(a.records[i].control.steer == b.records[i].control.steer);
    CHECK(a.records[i].target_points == b.records[i].target_points);
    CHECK(a.records[i].occl_estimate == b.records[i].occl_estimate);
  }
  CHECK(a.metrics.occlusion_ratio == b.metrics.occlusion_ratio);
  CHECK(a.metrics.min_clearance_overall == b.metrics.min_clearance_overall);
}

TEST_CASE("path follower brakes behind a blocking obstacle, ratio near one") {
  Scenario sc = basic_scenario(30.0);
  sc.obstacles.push_back(box_at(15.0, 0.0, 1.5, 1.5));
  const RunResult rr = run(sc, PlannerKind::Pathfollow, fast_cfg(), 0);
  CHECK(rr.metrics.occlusion_ratio > 0.9);
  CHECK_FALSE(rr.metrics.time_to_target.has_value());

  SUBCASE("ground-truth cross-check on fully occluded frames") {
    const OcclusionGeom geom = occlusion_geom(sc.obstacles[0]);
    const Vec2 centroid = sc.target_truth.centroid();
    int checked = 0;
    for (const auto& r : rr.records) {
      if (r.target_points != 0) continue;
      Scenario clear = sc;
      clear.obstacles.clear();
      const auto iv = subtended(r.robot.position(), clear.target_truth);
      if (oracle_ray_count(r.robot, sc.lidar, iv.lo, iv.hi) < 3) continue;
      CHECK(occluded(r.robot.position(), centroid, geom));
      ++checked;
    }
    CHECK(checked > 0);
  }
}
