#include "croa/dynamics.hpp"

#include <cmath>

namespace croa {

double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a == 0.0 ? M_PI : a - M_PI;  // maps to (-pi, pi]
}

State step(const State& s, const Control& u, double dt, double wheelbase) {
  State out;
  out.x = s.x + u.speed * std::cos(s.heading) * dt;
  out.y = s.y + u.speed * std::sin(s.heading) * dt;
  out.heading = wrap_angle(s.heading + u.speed * std::tan(u.steer) / wheelbase * dt);
  return out;
}

AffineDynamics linearize(const State& s_ref, const Control& u_ref, double dt,
                         double wheelbase) {
  const double c = std::cos(s_ref.heading), sn = std::sin(s_ref.heading);
  const double v = u_ref.speed;
  const double tan_psi = std::tan(u_ref.steer);
  const double sec2 = 1.0 + tan_psi * tan_psi;

  AffineDynamics lin;
  lin.A = Eigen::Matrix3d::Identity();
  lin.A(0, 2) = -v * sn * dt;
  lin.A(1, 2) = v * c * dt;

  lin.B.setZero();
  lin.B(0, 0) = c * dt;
  lin.B(1, 0) = sn * dt;
  lin.B(2, 0) = tan_psi / wheelbase * dt;
  lin.B(2, 1) = v * sec2 / wheelbase * dt;

  // Unwrapped next state so the affine map is smooth; heading wrap is applied
  // only when states are realized.
  Eigen::Vector3d next(s_ref.x + v * c * dt, s_ref.y + v * sn * dt,
                       s_ref.heading + v * tan_psi / wheelbase * dt);
  lin.c = next - lin.A * s_ref.vec() -
          lin.B * Eigen::Vector2d(u_ref.speed, u_ref.steer);
  return lin;
}

Trajectory rollout(const State& s0, std::span<const Control> controls,
                   double dt, double wheelbase) {
  Trajectory traj;
  traj.dt = dt;
  traj.states.reserve(controls.size() + 1);
  traj.controls.assign(controls.begin(), controls.end());
  traj.states.push_back(s0);
  for (const Control& u : controls) {
    traj.states.push_back(step(traj.states.back(), u, dt, wheelbase));
  }
  return traj;
}

}  // namespace croa
