#pragma once

#include <algorithm>
#include <cmath>

#include "lanepilot/sim/geometry.hpp"

namespace lanepilot::sim {

struct VehicleParams {
  double wheelbase = 1.0;     // m
  double omega_max = 1.5;     // rad/s
  double v_max = 30.0 / 3.6;  // 30 km/h
  double cruise_speed = 2.0;  // m/s
  double accel_limit = 2.0;   // m/s^2, applied when tracking target speed
  double radius = 0.3;        // chassis disk, m
};

struct VehicleState {
  Pose pose;
  double speed = 0.0;     // m/s, in [0, v_max]
  double steering = 0.0;  // last commanded steering, rad

  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

// Yaw rate for a steering angle at a given speed: (v / L) tan(delta),
// clamped to +-omega_max.
inline double steering_to_omega(double steering, double speed, const VehicleParams& p = {}) {
  const double omega = speed / p.wheelbase * std::tan(steering);
  return std::clamp(omega, -p.omega_max, p.omega_max);
}

// Semi-implicit Euler on the unicycle model: heading first, then position
// along the updated heading.
inline VehicleState step_vehicle(VehicleState s, double omega, double dt) {
  if (omega != 0.0) s.pose.heading = wrap_angle(s.pose.heading + omega * dt);
  if (s.speed != 0.0) {
    s.pose.x += s.speed * std::cos(s.pose.heading) * dt;
    s.pose.y += s.speed * std::sin(s.pose.heading) * dt;
  }
  return s;
}

// Moves speed toward target at most accel_limit * dt, clamped to [0, v_max].
inline double approach_speed(double speed, double target, double dt, const VehicleParams& p) {
  target = std::clamp(target, 0.0, p.v_max);
  const double max_delta = p.accel_limit * dt;
  return std::clamp(target, speed - max_delta, speed + max_delta);
}

}  // namespace lanepilot::sim
