#include "croa/collision.hpp"

#include <cmath>
#include <vector>

namespace croa {

namespace {
using Triplet = Eigen::Triplet<double>;
}

EgoShape ego_box(double length, double width, double rear_overhang) {
  const double x0 = -rear_overhang, x1 = length - rear_overhang;
  const double hw = 0.5 * width;
  const std::vector<Vec2> corners{{x0, -hw}, {x1, -hw}, {x1, hw}, {x0, hw}};
  return EgoShape{polytope_from_vertices(corners)};
}

EgoHalfspaces ego_halfspaces(const EgoShape& shape, const State& s) {
  const Eigen::Matrix2d r = rotation(s.heading);
  EgoHalfspaces hs;
  hs.G = shape.body.normals * r.transpose();
  hs.g = shape.body.offsets + hs.G * s.position();
  return hs;
}

DualPair solve_dual(const EgoHalfspaces& ego, const ConvexPolytope& obstacle) {
  const int m_obs = obstacle.num_faces();
  const int m_ego = static_cast<int>(ego.G.rows());
  const int n = m_obs + m_ego;  // variables: [lambda; mu]

  // max -lambda'h - mu'g  <=>  min lambda'h + mu'g
  ConicProgram prog;
  prog.num_vars = n;
  prog.P.resize(n, n);
  prog.q.resize(n);
  prog.q.head(m_obs) = obstacle.offsets;
  prog.q.tail(m_ego) = ego.g;

  // Stationarity: H' lambda + G' mu = 0.
  std::vector<Triplet> a_trips;
  for (int i = 0; i < m_obs; ++i) {
    a_trips.emplace_back(0, i, obstacle.normals(i, 0));
    a_trips.emplace_back(1, i, obstacle.normals(i, 1));
  }
  for (int i = 0; i < m_ego; ++i) {
    a_trips.emplace_back(0, m_obs + i, ego.G(i, 0));
    a_trips.emplace_back(1, m_obs + i, ego.G(i, 1));
  }
  prog.A.resize(2, n);
  prog.A.setFromTriplets(a_trips.begin(), a_trips.end());
  prog.b = Eigen::Vector2d::Zero();

  // lambda >= 0, mu >= 0.
  std::vector<Triplet> g_trips;
  for (int i = 0; i < n; ++i) g_trips.emplace_back(i, i, -1.0);
  prog.G.resize(n, n);
  prog.G.setFromTriplets(g_trips.begin(), g_trips.end());
  prog.h = Eigen::VectorXd::Zero(n);

  // ||H' lambda|| <= 1 as a rotated cone with u = v = 1.
  RotatedConeBlock cone;
  std::vector<Triplet> c_trips;
  for (int i = 0; i < m_obs; ++i) {
    c_trips.emplace_back(2, i, obstacle.normals(i, 0));
    c_trips.emplace_back(3, i, obstacle.normals(i, 1));
  }
  cone.C.resize(4, n);
  cone.C.setFromTriplets(c_trips.begin(), c_trips.end());
  cone.d.resize(4);
  cone.d << 1.0, 1.0, 0.0, 0.0;
  prog.cones.push_back(std::move(cone));

  SolveOptions opts;
  opts.tol = 1e-8;
  opts.max_iters = 300;
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
  double row_norm = 1.0;
  for (int i = 0; i < m_obs; ++i) row_norm += obstacle.normals.row(i).norm();
  x0.head(m_obs).setConstant(1e-3 / row_norm);
  x0.tail(m_ego).setConstant(1e-3);
  opts.initial_point = x0;

  const Solution sol = solve(prog, opts);
  if (sol.status != SolveStatus::Optimal &&
      sol.status != SolveStatus::MaxIters) {
    throw SolverFailure("dual separation solve failed: " +
                        std::string(to_string(sol.status)));
  }

  DualPair pair;
  pair.lambda = sol.values.head(m_obs).cwiseMax(0.0);
  pair.mu = sol.values.tail(m_ego).cwiseMax(0.0);
  pair.value = -sol.objective;
  pair.stationarity_residual = (obstacle.normals.transpose() * pair.lambda +
                                ego.G.transpose() * pair.mu)
                                   .norm();
  return pair;
}

std::vector<CollisionConstraint> linearized_collision_constraints(
    std::span<const DualPair> duals, const Trajectory& reference,
    const EgoShape& shape, std::span<const ConvexPolytope> obstacles,
    double d0) {
  const int horizon = static_cast<int>(reference.controls.size());
  const int num_obs = static_cast<int>(obstacles.size());
  if (static_cast<int>(duals.size()) != horizon * num_obs) {
    throw CollisionError("dual pair count does not match horizon x obstacles");
  }
  (void)d0;

  std::vector<CollisionConstraint> out;
  out.reserve(duals.size());
  for (int h = 1; h <= horizon; ++h) {
    const double heading = reference.states[h].heading;
    const Eigen::Matrix2d r = rotation(heading);
    const Eigen::MatrixX2d g_world = shape.body.normals * r.transpose();
    for (int k = 0; k < num_obs; ++k) {
      const DualPair& dp = duals[(h - 1) * num_obs + k];
      const ConvexPolytope& obs = obstacles[k];
      if (dp.lambda.minCoeff() < -1e-9 || dp.mu.minCoeff() < -1e-9 ||
          (obs.normals.transpose() * dp.lambda).norm() > 1.0 + 1e-8 ||
          dp.stationarity_residual > 1e-6) {
        throw StaleDuals("dual pair violates feasibility invariants");
      }
      CollisionConstraint c;
      c.obstacle_index = k;
      c.step_index = h;
      c.coeff = -(g_world.transpose() * dp.mu);
      c.offset = -dp.lambda.dot(obs.offsets) - dp.mu.dot(shape.body.offsets);
      c.reference_value = dp.value;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace croa
