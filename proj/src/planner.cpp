#include "croa/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <limits>

#include "croa/conic.hpp"

namespace croa {

namespace {

using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;
using Clock = std::chrono::steady_clock;

enum class Mode { Croa, Ompc };

// Tighter cap on the xi and w decision variables inside the trajectory
// subproblem than the analytic kXiCap: values of 1e6 next to positions of
// order 10 wreck the Newton system's conditioning, and any sample past this
// cap is fully occluded for ranking purposes anyway.
constexpr double kStepAXiCap = 1e3;

// Upper bound on the occlusion hinge slacks; generous because the tangent
// over-estimator can reach ~1e5 for far samples, but finite so that
// zero-weight hinges cannot form an unbounded ray.
constexpr double kHingeCap = 1e6;

double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

bool betweenness(const Vec2& p, const Vec2& z, const Vec2& o) {
  const Vec2 d = z - p;
  const double len2 = d.squaredNorm();
  if (len2 < 1e-30) return false;
  const double t = (o - p).dot(d) / len2;
  return t > 0.0 && t < 1.0;
}

// Internal affine clearance constraint, margin(p) = coeff.p + offset >= d0.
struct LinearClearance {
  int step = 1;  // 1..H
  Vec2 coeff = Vec2::Zero();
  double offset = 0.0;
};

double inscribed_radius(const ConvexPolytope& body) {
  return body.offsets.minCoeff();
}

Trajectory braked_rollout(const State& s0, const PlannerConfig& cfg) {
  std::vector<Control> controls(cfg.horizon);
  for (int h = 0; h < cfg.horizon; ++h) {
    const double v =
        cfg.nominal_speed * (cfg.horizon - h) / static_cast<double>(cfg.horizon);
    controls[h] = Control{clamp(v, cfg.bounds.min.speed, cfg.bounds.max.speed),
                          0.0};
  }
  return rollout(s0, controls, cfg.dt, cfg.wheelbase);
}

Trajectory shifted_reference(const State& s0, const PlanResult* warm,
                             const PlannerConfig& cfg) {
  if (warm == nullptr ||
      static_cast<int>(warm->trajectory.controls.size()) != cfg.horizon) {
    return braked_rollout(s0, cfg);
  }
  std::vector<Control> controls(warm->trajectory.controls.begin() + 1,
                                warm->trajectory.controls.end());
  controls.push_back(warm->trajectory.controls.back());
  // Keep the expansion point moving: the linearized bicycle loses all lateral
  // authority as the reference speed goes to zero, which can freeze the
  // planner in place. The floor only affects the linearization, not the
  // feasible set of the subproblem.
  const double v_floor = std::min(0.2 * cfg.nominal_speed, cfg.bounds.max.speed);
  for (auto& u : controls) u.speed = std::max(u.speed, v_floor);
  return rollout(s0, controls, cfg.dt, cfg.wheelbase);
}

// Closed-form Step B update for fixed trajectory: xi tight at the terminal
// position (over gated obstacles), w the positive part of xi - 1.
void step_b(const Vec2& terminal_p, const SampleSet& samples,
            std::span<const OcclusionGeom> geoms, const PlannerConfig& cfg,
            OcclusionSlack& slack) {
  const int m = samples.size();
  slack.xi.assign(m, cfg.xi_floor);
  slack.w.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double xi = cfg.xi_floor;
    for (const OcclusionGeom& geom : geoms) {
      if (!betweenness(terminal_p, samples.samples[i], geom.center)) continue;
      double tight = kXiCap;
      try {
        tight = xi_tight(terminal_p, samples.samples[i], geom);
      } catch (const OnSightLine&) {
        // dist -> 0: xi unbounded, clamp at the cap
      }
      xi = std::max(xi, tight);
    }
    slack.xi[i] = clamp(xi, cfg.xi_floor, kXiCap);
    slack.w[i] = std::max(slack.xi[i] - 1.0, 0.0);
  }
}

double weighted_slack_sum(const SampleSet& samples, const OcclusionSlack& s) {
  double sum = 0.0;
  for (int i = 0; i < samples.size(); ++i) sum += samples.weights[i] * s.w[i];
  return sum;
}

// Heading targets unwrapped toward the reference so the quadratic tracking
// term never penalizes a 2*pi jump.
double unwrap_toward(double angle, double anchor) {
  return anchor + wrap_angle(angle - anchor);
}

struct StepAProblem {
  ConicProgram prog;
  VectorXd x0;  // strictly feasible start for the barrier
  int n_state = 0;
  int n_ctrl = 0;
};

// Assemble and solve one Step A subproblem: quadratic tracking cost over the
// linearized dynamics, slacked clearance constraints, and (CROA) the
// perspective occlusion surrogates as rotated cones with hinge slacks.
SolveStatus step_a(const Trajectory& reference, const Trajectory& trust_center,
            const Waypoints& waypoints,
            std::span<const LinearClearance> clearances,
            std::span<const SurrogateConstraint> surrogates,
            const SampleSet& samples, const OcclusionSlack& slack,
            const Vec2& ompc_cost_gradient, double rotation_lever,
            const PlannerConfig& cfg, Trajectory& out) {
  const int H = cfg.horizon;
  const int n_state = 3 * (H + 1);
  const int n_ctrl = 2 * H;
  const int n_cs = static_cast<int>(clearances.size());
  const int n_hs = cfg.hard_occlusion_constraints
                       ? 0
                       : static_cast<int>(surrogates.size());
  const int n_xi =
      cfg.xi_in_step_a && !surrogates.empty() ? samples.size() : 0;
  const int n_w = n_xi;  // one visibility slack per xi variable
  const int n = n_state + n_ctrl + n_cs + n_hs + n_xi + n_w;

  const auto s_idx = [](int h, int j) { return 3 * h + j; };
  const auto u_idx = [n_state](int h, int j) { return n_state + 2 * h + j; };
  const auto cs_idx = [n_state, n_ctrl](int c) {
    return n_state + n_ctrl + c;
  };
  const auto hs_idx = [n_state, n_ctrl, n_cs](int j) {
    return n_state + n_ctrl + n_cs + j;
  };
  const auto xi_idx = [n_state, n_ctrl, n_cs, n_hs](int i) {
    return n_state + n_ctrl + n_cs + n_hs + i;
  };
  const auto w_idx = [n_state, n_ctrl, n_cs, n_hs, n_xi](int i) {
    return n_state + n_ctrl + n_cs + n_hs + n_xi + i;
  };

  ConicProgram prog;
  prog.num_vars = n;
  prog.q = VectorXd::Zero(n);

  // Tracking cost rho * sum_h |s_h - wp_h|^2 for h = 1..H.
  std::vector<Triplet> p_trips;
  for (int h = 1; h <= H; ++h) {
    const State& wp = waypoints.states[h];
    const double heading_target =
        unwrap_toward(wp.heading, reference.states[h].heading);
    const double targets[3] = {wp.x, wp.y, heading_target};
    for (int j = 0; j < 3; ++j) {
      p_trips.emplace_back(s_idx(h, j), s_idx(h, j), 2.0 * cfg.rho);
      prog.q[s_idx(h, j)] = -2.0 * cfg.rho * targets[j];
    }
  }
  for (int c = 0; c < n_cs; ++c) prog.q[cs_idx(c)] = cfg.penalty_collision_slack;
  for (int j = 0; j < n_hs; ++j) {
    prog.q[hs_idx(j)] =
        cfg.penalty_occlusion * samples.weights[surrogates[j].sample_index];
  }
  // In joint mode the visibility cost sum_i Q_i w_i is part of the
  // trajectory subproblem, so shrinking xi_tight pays off directly.
  for (int i = 0; i < n_w; ++i) prog.q[w_idx(i)] = samples.weights[i];
  prog.P.resize(n, n);
  prog.P.setFromTriplets(p_trips.begin(), p_trips.end());

  // Equalities: initial state pinned, then the linearized dynamics.
  const int m_eq = 3 * (H + 1);
  std::vector<Triplet> a_trips;
  prog.b = VectorXd::Zero(m_eq);
  for (int j = 0; j < 3; ++j) {
    a_trips.emplace_back(j, s_idx(0, j), 1.0);
    prog.b[j] = reference.states[0].vec()[j];
  }
  for (int h = 0; h < H; ++h) {
    const AffineDynamics dyn = linearize(reference.states[h],
                                         reference.controls[h], cfg.dt,
                                         cfg.wheelbase);
    const int row = 3 * (h + 1);
    for (int r = 0; r < 3; ++r) {
      for (int cidx = 0; cidx < 3; ++cidx) {
        if (dyn.A(r, cidx) != 0.0)
          a_trips.emplace_back(row + r, s_idx(h, cidx), dyn.A(r, cidx));
      }
      for (int cidx = 0; cidx < 2; ++cidx) {
        if (dyn.B(r, cidx) != 0.0)
          a_trips.emplace_back(row + r, u_idx(h, cidx), dyn.B(r, cidx));
      }
      a_trips.emplace_back(row + r, s_idx(h + 1, r), -1.0);
      prog.b[row + r] = -dyn.c[r];
    }
  }
  prog.A.resize(m_eq, n);
  prog.A.setFromTriplets(a_trips.begin(), a_trips.end());

  // Inequalities.
  std::vector<Triplet> g_trips;
  std::vector<double> h_vals;
  const auto add_row = [&](double rhs) {
    h_vals.push_back(rhs);
    return static_cast<int>(h_vals.size()) - 1;
  };
  for (int h = 0; h < H; ++h) {
    int r = add_row(cfg.bounds.max.speed);
    g_trips.emplace_back(r, u_idx(h, 0), 1.0);
    r = add_row(-cfg.bounds.min.speed);
    g_trips.emplace_back(r, u_idx(h, 0), -1.0);
    r = add_row(cfg.bounds.max.steer);
    g_trips.emplace_back(r, u_idx(h, 1), 1.0);
    r = add_row(-cfg.bounds.min.steer);
    g_trips.emplace_back(r, u_idx(h, 1), -1.0);
  }
  // Heading trust region about the trajectory the duals were solved at.
  for (int h = 1; h <= H; ++h) {
    const double center = trust_center.states[h].heading;
    int r = add_row(center + cfg.heading_trust_region);
    g_trips.emplace_back(r, s_idx(h, 2), 1.0);
    r = add_row(cfg.heading_trust_region - center);
    g_trips.emplace_back(r, s_idx(h, 2), -1.0);
  }
  for (int c = 0; c < n_cs; ++c) {
    // coeff.p + offset + slack >= d0 + margin + lever*|psi - psi_ref|.
    // The dual bound is exact under translation but frozen at the reference
    // heading; the lever term charges rotation against clearance (the bound
    // degrades by at most lever * |delta psi|), written as two affine rows.
    const LinearClearance& lc = clearances[c];
    const double rhs = lc.offset - cfg.d0 - cfg.collision_margin;
    const double psi_ref = trust_center.states[lc.step].heading;
    for (const double sign : {1.0, -1.0}) {
      const int r = add_row(rhs - sign * rotation_lever * psi_ref);
      g_trips.emplace_back(r, s_idx(lc.step, 0), -lc.coeff.x());
      g_trips.emplace_back(r, s_idx(lc.step, 1), -lc.coeff.y());
      g_trips.emplace_back(r, cs_idx(c), -1.0);
      if (rotation_lever > 0.0)
        g_trips.emplace_back(r, s_idx(lc.step, 2), -sign * rotation_lever);
      if (rotation_lever == 0.0) break;
    }
    const int rpos = add_row(0.0);
    g_trips.emplace_back(rpos, cs_idx(c), -1.0);
  }
  for (int j = 0; j < n_hs; ++j) {
    int r = add_row(0.0);
    g_trips.emplace_back(r, hs_idx(j), -1.0);
    // Capped for the same reason as xi and w: hinge slacks whose sample
    // weight underflows to zero would otherwise span a free recession ray.
    r = add_row(kHingeCap);
    g_trips.emplace_back(r, hs_idx(j), 1.0);
  }
  for (int i = 0; i < n_xi; ++i) {
    int r = add_row(-cfg.xi_floor);
    g_trips.emplace_back(r, xi_idx(i), -1.0);
    // Upper caps keep the feasible region bounded in (xi, w) even for
    // samples whose weight underflows to zero.
    r = add_row(kStepAXiCap);
    g_trips.emplace_back(r, xi_idx(i), 1.0);
    // xi_i - w_i <= 1 and 0 <= w_i <= cap.
    r = add_row(1.0);
    g_trips.emplace_back(r, xi_idx(i), 1.0);
    g_trips.emplace_back(r, w_idx(i), -1.0);
    r = add_row(0.0);
    g_trips.emplace_back(r, w_idx(i), -1.0);
    r = add_row(kStepAXiCap);
    g_trips.emplace_back(r, w_idx(i), 1.0);
  }
  prog.G.resize(static_cast<int>(h_vals.size()), n);
  prog.G.setFromTriplets(g_trips.begin(), g_trips.end());
  prog.h = Eigen::Map<const VectorXd>(h_vals.data(),
                                      static_cast<int>(h_vals.size()));

  // Occlusion surrogates as rotated cones:
  //   R^2 |p_H - g_i|^2 <= xi_i * (t_j - theta_hat(p_H)).
  for (int j = 0; j < static_cast<int>(surrogates.size()); ++j) {
    const SurrogateConstraint& sc = surrogates[j];
    RotatedConeBlock blk;
    std::vector<Triplet> c_trips;
    blk.d.resize(4);
    c_trips.emplace_back(0, s_idx(H, 0), -sc.theta_hat.gradient.x());
    c_trips.emplace_back(0, s_idx(H, 1), -sc.theta_hat.gradient.y());
    if (!cfg.hard_occlusion_constraints) c_trips.emplace_back(0, hs_idx(j), 1.0);
    blk.d[0] = -sc.theta_hat.offset;
    if (cfg.xi_in_step_a) {
      c_trips.emplace_back(1, xi_idx(sc.sample_index), 1.0);
      blk.d[1] = 0.0;
    } else {
      blk.d[1] = slack.xi[sc.sample_index];
    }
    c_trips.emplace_back(2, s_idx(H, 0), sc.radius);
    c_trips.emplace_back(3, s_idx(H, 1), sc.radius);
    blk.d[2] = -sc.radius * sc.sample.x();
    blk.d[3] = -sc.radius * sc.sample.y();
    blk.C.resize(4, n);
    blk.C.setFromTriplets(c_trips.begin(), c_trips.end());
    prog.cones.push_back(std::move(blk));
  }

  // OMPC's linearized smooth occlusion proxy enters as a gradient on the
  // terminal position.
  prog.q[s_idx(H, 0)] += cfg.penalty_occlusion * ompc_cost_gradient.x();
  prog.q[s_idx(H, 1)] += cfg.penalty_occlusion * ompc_cost_gradient.y();

  // Strictly feasible start assembled from the reference.
  VectorXd x0 = VectorXd::Zero(n);
  for (int h = 0; h <= H; ++h) {
    x0.segment<3>(s_idx(h, 0)) = reference.states[h].vec();
  }
  const double eps = 1e-3;
  for (int h = 1; h <= H; ++h) {
    const double center = trust_center.states[h].heading;
    x0[s_idx(h, 2)] = clamp(x0[s_idx(h, 2)],
                            center - cfg.heading_trust_region + eps,
                            center + cfg.heading_trust_region - eps);
  }
  for (int h = 0; h < H; ++h) {
    x0[u_idx(h, 0)] = clamp(reference.controls[h].speed,
                            cfg.bounds.min.speed + eps,
                            cfg.bounds.max.speed - eps);
    x0[u_idx(h, 1)] = clamp(reference.controls[h].steer,
                            cfg.bounds.min.steer + eps,
                            cfg.bounds.max.steer - eps);
  }
  for (int c = 0; c < n_cs; ++c) {
    const LinearClearance& lc = clearances[c];
    const Vec2 p = reference.states[lc.step].position();
    const double margin = lc.coeff.dot(p) + lc.offset;
    const double rot = rotation_lever *
                       std::abs(x0[s_idx(lc.step, 2)] -
                                trust_center.states[lc.step].heading);
    x0[cs_idx(c)] =
        std::max(0.0, cfg.d0 + cfg.collision_margin + rot - margin) + 1.0;
  }
  const Vec2 p_ref = reference.states[H].position();
  for (int i = 0; i < n_xi; ++i) {
    x0[xi_idx(i)] =
        clamp(slack.xi[i], cfg.xi_floor + eps, kStepAXiCap - 1.0);
    x0[w_idx(i)] =
        std::min(std::max(x0[xi_idx(i)] - 1.0, 0.0) + 1.0,
                 kStepAXiCap - 1.0);
  }
  for (int j = 0; j < n_hs; ++j) {
    const SurrogateConstraint& sc = surrogates[j];
    const double xi = cfg.xi_in_step_a ? x0[xi_idx(sc.sample_index)]
                                       : slack.xi[sc.sample_index];
    const double w2 =
        sc.radius * sc.radius * (p_ref - sc.sample).squaredNorm();
    x0[hs_idx(j)] =
        std::min(std::max(1.0, sc.theta_hat.value(p_ref) + w2 / xi + 1.0),
                 kHingeCap - 1.0);
  }

  SolveOptions opts;
  opts.tol = 1e-5;
  opts.max_iters = 300;
  opts.initial_point = x0;
  const Solution sol = solve(prog, opts);
  if (std::getenv("CROA_DEBUG")) {
    std::fprintf(stderr,
                 "step_a status=%d iters=%d stat=%.3g peq=%.3g pineq=%.3g\n",
                 static_cast<int>(sol.status), sol.newton_iterations,
                 sol.kkt.stationarity, sol.kkt.primal_eq,
                 sol.kkt.primal_ineq);
  }
  if (sol.status != SolveStatus::Optimal &&
      sol.status != SolveStatus::MaxIters) {
    return sol.status;
  }
  if (sol.status == SolveStatus::MaxIters &&
      sol.kkt.primal_ineq > 1e-4) {
    return SolveStatus::NumericalFailure;
  }

  // Keep the clamped controls but rebuild the states through the exact
  // dynamics: the linear model grants heading change at zero speed, and
  // accepting those fictitious states stalls the closed loop.
  std::vector<Control> controls(static_cast<std::size_t>(H));
  for (int h = 0; h < H; ++h) {
    controls[h].speed = clamp(sol.values[u_idx(h, 0)],
                              cfg.bounds.min.speed, cfg.bounds.max.speed);
    controls[h].steer = clamp(sol.values[u_idx(h, 1)],
                              cfg.bounds.min.steer, cfg.bounds.max.steer);
  }
  out = rollout(reference.states[0], controls, cfg.dt, cfg.wheelbase);
  return SolveStatus::Optimal;
}

PlanResult plan_optimizing(const WorldSnapshot& world, const PlanResult* warm,
                           const PlannerConfig& cfg, int frame, Mode mode) {
  const auto t_start = Clock::now();
  const int H = cfg.horizon;
  PlanResult result;

  const Waypoints waypoints =
      reference_waypoints(world.robot, world.target.mean, cfg);
  Trajectory reference = shifted_reference(world.robot, warm, cfg);

  SampleSet samples;
  if (cfg.samples > 0) {
    samples = draw_samples(world.target, cfg.samples,
                           cfg.seed + static_cast<std::uint64_t>(frame),
                           cfg.weight_mode);
  }

  std::vector<OcclusionGeom> geoms;
  geoms.reserve(world.obstacles.size());
  for (const auto& obs : world.obstacles) geoms.push_back(occlusion_geom(obs));

  const EgoShape& shape = world.ego;

  // Clearance constraints from duals (CROA/tracking) or disc geometry (OMPC),
  // built once per horizon at the reference.
  // Worst-case vertex travel per radian of rotation about the rear axle.
  double rotation_lever = 0.0;
  if (mode == Mode::Croa) {
    for (const Vec2& v : shape.body.vertices)
      rotation_lever = std::max(rotation_lever, v.norm());
  }

  std::vector<LinearClearance> clearances;
  if (mode == Mode::Croa) {
    std::vector<DualPair> duals;
    duals.reserve(world.obstacles.size() * H);
    for (int h = 1; h <= H; ++h) {
      const EgoHalfspaces hs = ego_halfspaces(shape, reference.states[h]);
      for (const auto& obs : world.obstacles) {
        duals.push_back(solve_dual(hs, obs));
      }
    }
    const auto cons = linearized_collision_constraints(
        duals, reference, shape, world.obstacles, cfg.d0);
    for (const auto& c : cons) {
      if (c.reference_value > 1e-6) {
        clearances.push_back(LinearClearance{c.step_index, c.coeff, c.offset});
        continue;
      }
      // The reference pose touches or penetrates this obstacle, so the dual
      // separation value is zero and its gradient carries no direction.
      // Substitute the least-penetrating obstacle face: the face normal n
      // maximizing min_j n.(p + R v_j) - b over ego vertices v_j gives the
      // shallowest push-out, and the resulting row n.p + offset >= d0 is
      // exact under translation just like the dual rows.
      const ConvexPolytope& obs =
          world.obstacles[static_cast<std::size_t>(c.obstacle_index)];
      const Eigen::Matrix2d rot =
          rotation(reference.states[c.step_index].heading);
      double best_depth = -std::numeric_limits<double>::infinity();
      Vec2 best_n = Vec2(1.0, 0.0);
      double best_offset = 0.0;
      for (int i = 0; i < obs.num_faces(); ++i) {
        const Vec2 n = obs.normals.row(i).transpose();
        double worst = std::numeric_limits<double>::infinity();
        for (const Vec2& v : shape.body.vertices)
          worst = std::min(worst, n.dot(rot * v));
        const double offset = worst - obs.offsets[i];
        const double depth =
            n.dot(reference.states[c.step_index].position()) + offset;
        if (depth > best_depth) {
          best_depth = depth;
          best_n = n;
          best_offset = offset;
        }
      }
      clearances.push_back(
          LinearClearance{c.step_index, best_n, best_offset});
    }
    for (const auto& dp : duals) {
      result.diagnostics.max_dual_residual = std::max(
          result.diagnostics.max_dual_residual, dp.stationarity_residual);
    }
    result.duals = std::move(duals);
  } else {
    const Vec2 body_center = shape.body.centroid();
    const double r_cover = circumradius(shape.body, body_center);
    for (int h = 1; h <= H; ++h) {
      const Vec2 shift = rotation(reference.states[h].heading) * body_center;
      const Vec2 p = reference.states[h].position() + shift;
      for (std::size_t k = 0; k < geoms.size(); ++k) {
        const Vec2 diff = p - geoms[k].center;
        const double dist = diff.norm();
        const Vec2 a = dist > 1e-9 ? Vec2(diff / dist) : Vec2(1.0, 0.0);
        const double r_disc = geoms[k].radius + r_cover;
        clearances.push_back(LinearClearance{
            h, a, a.dot(shift - geoms[k].center) - r_disc});
      }
    }
  }

  OcclusionSlack slack;
  if (cfg.samples > 0) {
    step_b(reference.states[H].position(), samples, geoms, cfg, slack);
  }

  // Collision term of the merged penalty objective: the minimal slack each
  // clearance row needs at this trajectory, priced like the subproblem does.
  const auto collision_penalty = [&](const Trajectory& t) {
    double total = 0.0;
    for (const LinearClearance& lc : clearances) {
      const Vec2 p = t.states[lc.step].position();
      const double dpsi = std::abs(t.states[lc.step].heading -
                                   reference.states[lc.step].heading);
      const double viol = cfg.d0 + cfg.collision_margin + rotation_lever * dpsi -
                          (lc.coeff.dot(p) + lc.offset);
      if (viol > 0.0) total += cfg.penalty_collision_slack * viol;
    }
    return total;
  };

  Trajectory best = reference;
  double best_obj = tracking_cost(best, waypoints, cfg.rho) +
                    collision_penalty(best);
  if (cfg.samples > 0) {
    best_obj += weighted_slack_sum(samples, slack);
  }

  bool any_solve = false;
  bool any_accept = false;
  bool stop = false;
  for (int ccp = 0; ccp < cfg.ccp_iters && !stop; ++ccp) {
    ++result.diagnostics.ccp_iterations;
    const Vec2 expansion = best.states[H].position();
    std::vector<SurrogateConstraint> surrogates;
    Vec2 ompc_grad = Vec2::Zero();
    if (mode == Mode::Croa && cfg.samples > 0) {
      surrogates = build_occlusion_constraints(expansion, samples, geoms);
    } else if (mode == Mode::Ompc) {
      // Gradient of sum_k exp(-d^2/(2 R^2)) at the expansion point.
      for (const auto& geom : geoms) {
        if (!betweenness(expansion, world.target.mean, geom.center)) continue;
        const Vec2 og = geom.center - world.target.mean;
        const double len = og.norm();
        if (len < 1e-9) continue;
        const Vec2 a = Vec2(-og.y(), og.x()) / len;
        const double c = a.dot(expansion - world.target.mean);
        const double d2 = c * c;
        const double r2 = geom.radius * geom.radius;
        ompc_grad += std::exp(-d2 / (2.0 * r2)) * (-c / r2) * a;
      }
    }

    for (int alt = 0; alt < cfg.alt_iters; ++alt) {
      ++result.diagnostics.alt_iterations;
      Trajectory candidate;
      const SolveStatus status =
          step_a(best, reference, waypoints, clearances, surrogates, samples,
                 slack, ompc_grad, rotation_lever, cfg, candidate);
      if (status != SolveStatus::Optimal) {
        // The slacked subproblem is feasible by construction, so only a
        // proven-infeasible verdict is fatal; numerical failures fall back
        // to the best iterate so the closed loop can keep running.
        if (status == SolveStatus::Infeasible && !any_solve) {
          throw InfeasibleStart("slacked trajectory subproblem infeasible");
        }
        result.diagnostics.solver_ok = false;
        stop = true;
        break;
      }
      any_solve = true;

      OcclusionSlack cand_slack = slack;
      if (cfg.samples > 0) {
        step_b(candidate.states[H].position(), samples, geoms, cfg,
               cand_slack);
      }
      double obj = tracking_cost(candidate, waypoints, cfg.rho) +
                   collision_penalty(candidate);
      if (cfg.samples > 0) obj += weighted_slack_sum(samples, cand_slack);

      const double decrease = best_obj - obj;
      if (obj <= best_obj + 1e-9) {
        best = candidate;
        slack = cand_slack;
        best_obj = obj;
        any_accept = true;
      }
      result.diagnostics.objective_trace.push_back(best_obj);
      if (decrease < 1e-4) {
        if (alt > 0 || ccp > 0) stop = true;
        break;
      }
    }
  }

  // Safety filter on the executed step: the linearized rows are models, so
  // audit the first planned state against exact polytope clearance. Braking
  // holds the current (safe) pose because speed is a direct control, so the
  // closed loop keeps clearance by induction.
  if (!world.obstacles.empty()) {
    const ConvexPolytope ego1 = transform(
        shape.body, best.states[1].heading, best.states[1].position());
    double clear1 = std::numeric_limits<double>::infinity();
    for (const auto& obs : world.obstacles)
      clear1 = std::min(clear1, exact_distance(ego1, obs));
    if (clear1 < cfg.d0 - 0.04) {
      result.diagnostics.solver_ok = false;
      any_accept = false;
    }
  }

  if (!result.diagnostics.solver_ok && !any_accept) {
    // Every solve failed this call: braking in place is always dynamically
    // feasible and safer than executing the shifted warm reference, whose
    // floored speeds would creep the robot forward blindly.
    std::vector<Control> stop_controls(static_cast<std::size_t>(H),
                                       Control{0.0, 0.0});
    best = rollout(reference.states[0], stop_controls, cfg.dt, cfg.wheelbase);
    if (cfg.samples > 0) {
      step_b(best.states[H].position(), samples, geoms, cfg, slack);
    }
  }

  result.trajectory = best;
  result.slacks = slack;
  if (cfg.samples > 0) {
    result.occl_estimate =
        occlusion_probability(best.states[H].position(), samples, geoms);
  }
  result.diagnostics.solve_time =
      std::chrono::duration<double>(Clock::now() - t_start).count();
  return result;
}

}  // namespace

Waypoints reference_waypoints(const State& s, const Vec2& target_mean,
                              const PlannerConfig& cfg) {
  const Vec2 start = s.position();
  const Vec2 to_target = target_mean - start;
  const double dist = to_target.norm();
  if (dist < 1e-6) throw DegenerateTarget("target at the robot position");
  const Vec2 dir = to_target / dist;
  const double bearing = std::atan2(dir.y(), dir.x());

  Waypoints wp;
  wp.states.reserve(cfg.horizon + 1);
  for (int h = 0; h <= cfg.horizon; ++h) {
    const double advance =
        std::min(h * cfg.dt * cfg.nominal_speed, dist);  // clamp at target
    const Vec2 p = start + advance * dir;
    wp.states.push_back(State{p.x(), p.y(), bearing});
  }
  return wp;
}

double tracking_cost(const Trajectory& traj, const Waypoints& waypoints,
                     double rho) {
  if (traj.states.size() != waypoints.states.size()) {
    throw PlannerError("trajectory / waypoint length mismatch");
  }
  double cost = 0.0;
  for (std::size_t h = 0; h < traj.states.size(); ++h) {
    const State& a = traj.states[h];
    const State& b = waypoints.states[h];
    const double dh = wrap_angle(a.heading - b.heading);
    cost += (a.position() - b.position()).squaredNorm() + dh * dh;
  }
  return rho * cost;
}

double ompc_occlusion_proxy(const Vec2& p, const Vec2& target_mean,
                            std::span<const OcclusionGeom> geoms) {
  double cost = 0.0;
  for (const auto& geom : geoms) {
    if (!betweenness(p, target_mean, geom.center)) continue;
    const double d = point_to_sight_line_distance(p, target_mean, geom.center);
    cost += std::exp(-d * d / (2.0 * geom.radius * geom.radius));
  }
  return cost;
}

PlanResult plan_croa(const WorldSnapshot& world, const PlanResult* warm,
                     const PlannerConfig& cfg, int frame) {
  return plan_optimizing(world, warm, cfg, frame, Mode::Croa);
}

PlanResult plan_ompc(const WorldSnapshot& world, const PlanResult* warm,
                     const PlannerConfig& cfg, int frame) {
  return plan_optimizing(world, warm, cfg, frame, Mode::Ompc);
}

PlanResult plan_tracking(const WorldSnapshot& world, const PlanResult* warm,
                         const PlannerConfig& cfg, int frame) {
  PlannerConfig plain = cfg;
  plain.samples = 0;
  plain.penalty_occlusion = 0.0;
  return plan_optimizing(world, warm, plain, frame, Mode::Croa);
}

PlanResult plan_pathfollow(const WorldSnapshot& world, const PlanResult* warm,
                           const PlannerConfig& cfg, int frame) {
  (void)warm;
  (void)frame;
  const auto t_start = Clock::now();
  PlanResult result;
  result.trajectory.dt = cfg.dt;
  result.trajectory.states.push_back(world.robot);

  const EgoShape& shape = world.ego;

  std::optional<Waypoints> waypoints;
  try {
    waypoints = reference_waypoints(world.robot, world.target.mean, cfg);
  } catch (const DegenerateTarget&) {
    // Zero-length path: stop in place.
  }

  State s = world.robot;
  for (int h = 0; h < cfg.horizon; ++h) {
    Control u{0.0, 0.0};
    if (waypoints) {
      // Pure pursuit toward a lookahead point on the waypoint line.
      const double lookahead = std::max(2.0, cfg.nominal_speed * cfg.dt);
      const Vec2 to_target = world.target.mean - s.position();
      const double dist = to_target.norm();
      const Vec2 aim =
          dist > lookahead
              ? Vec2(s.position() + lookahead * to_target / dist)
              : world.target.mean;
      const Vec2 local = rotation(-s.heading) * (aim - s.position());
      const double ld2 = std::max(local.squaredNorm(), 1e-9);
      const double steer =
          std::atan(2.0 * cfg.wheelbase * local.y() / ld2);
      u.steer = clamp(steer, cfg.bounds.min.steer, cfg.bounds.max.steer);
      u.speed = clamp(cfg.nominal_speed, cfg.bounds.min.speed,
                      cfg.bounds.max.speed);

      // Brake when the one-step lookahead would violate the clearance.
      const State next = step(s, u, cfg.dt, cfg.wheelbase);
      const Eigen::Matrix2d r = rotation(next.heading);
      std::vector<Vec2> world_verts;
      for (const Vec2& v : shape.body.vertices) {
        world_verts.push_back(r * v + next.position());
      }
      const auto ego_world = polytope_from_vertices(world_verts);
      for (const auto& obs : world.obstacles) {
        if (exact_distance(ego_world, obs) < cfg.d0) {
          u.speed = 0.0;
          u.steer = 0.0;
          break;
        }
      }
    }
    s = step(s, u, cfg.dt, cfg.wheelbase);
    result.trajectory.controls.push_back(u);
    result.trajectory.states.push_back(s);
  }

  result.diagnostics.solve_time =
      std::chrono::duration<double>(Clock::now() - t_start).count();
  return result;
}

}  // namespace croa
