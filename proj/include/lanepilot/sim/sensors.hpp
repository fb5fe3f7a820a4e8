#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "lanepilot/sim/geometry.hpp"
#include "lanepilot/sim/vehicle.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::sim {

// Three ultrasonic zones; a reading equal to the sensor range means clear.
struct ZoneReadings {
  double left = 0.0;
  double center = 0.0;
  double right = 0.0;
  double timestamp = 0.0;

  friend bool operator==(const ZoneReadings&, const ZoneReadings&) = default;
};

inline constexpr double kMinReading = 1e-3;

// Distance along a unit ray from `origin` to the first point of a disk, or
// +inf when the ray misses. An origin inside the disk reports 0.
inline double ray_disk_distance(Vec2 origin, Vec2 dir, Vec2 center, double radius) {
  const Vec2 m = origin - center;
  const double b = dot(m, dir);
  const double c = dot(m, m) - radius * radius;
  if (c <= 0.0) return 0.0;
  if (b > 0.0) return INFINITY;
  const double disc = b * b - c;
  if (disc < 0.0) return INFINITY;
  return -b - std::sqrt(disc);
}

// Rays at ray_step_deg increments from the vehicle periphery. Center covers
// [-c, c], left (c, s], right [-s, -c), with c/s the configured half-angles.
// Each zone reports the nearest disk hit, capped at the sensor range.
inline ZoneReadings sense_zones(const VehicleState& state, std::span<const Obstacle> obstacles,
                                const WorldConfig& cfg) {
  const double range = cfg.sensor_range;
  const double r_ego = cfg.vehicle.radius;
  ZoneReadings z{range, range, range, 0.0};
  const auto center_steps = static_cast<int>(std::floor(cfg.center_half_angle_deg / cfg.ray_step_deg + 1e-9));
  const auto outer_steps = static_cast<int>(std::floor(cfg.side_outer_angle_deg / cfg.ray_step_deg + 1e-9));

  std::vector<Vec2> local(obstacles.size());
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    local[i] = to_local(state.pose, obstacles[i].pose.position());
  }
  for (int k = -outer_steps; k <= outer_steps; ++k) {
    const double a = deg_to_rad(static_cast<double>(k) * cfg.ray_step_deg);
    const Vec2 dir{std::cos(a), std::sin(a)};
    const Vec2 origin = r_ego * dir;
    double best = range;
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
      best = std::min(best, ray_disk_distance(origin, dir, local[i], obstacles[i].radius));
    }
    best = std::max(best, kMinReading);
    double& slot = k > center_steps ? z.left : (k < -center_steps ? z.right : z.center);
    slot = std::min(slot, best);
  }
  return z;
}

}  // namespace lanepilot::sim
