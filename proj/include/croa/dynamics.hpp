#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "croa/geometry.hpp"

namespace croa {

/// Robot pose: position in meters, heading wrapped to (-pi, pi].
struct State {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  Eigen::Vector3d vec() const { return {x, y, heading}; }
};

/// Command: forward speed [m/s] and steering angle [rad].
struct Control {
  double speed = 0.0;
  double steer = 0.0;
};

struct ControlBounds {
  Control min{0.0, -0.6};
  Control max{8.0, 0.6};
};

struct Trajectory {
  std::vector<State> states;    // H+1
  std::vector<Control> controls; // H
  double dt = 0.0;
};

double wrap_angle(double a);

/// One forward-Euler step of the kinematic bicycle model.
State step(const State& s, const Control& u, double dt, double wheelbase);

/// First-order expansion of step about (s_ref, u_ref):
/// step(s, u) ~= A s + B u + c, exact at the reference.
struct AffineDynamics {
  Eigen::Matrix3d A;
  Eigen::Matrix<double, 3, 2> B;
  Eigen::Vector3d c;
};

AffineDynamics linearize(const State& s_ref, const Control& u_ref, double dt,
                         double wheelbase);

Trajectory rollout(const State& s0, std::span<const Control> controls,
                   double dt, double wheelbase);

}  // namespace croa
