#pragma once

#include <algorithm>
#include <cmath>

#include "lanepilot/common/error.hpp"
#include "lanepilot/sim/track.hpp"
#include "lanepilot/sim/vehicle.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::sim {

// Pure pursuit toward the center of `lane`, cfg.lookahead meters further
// along the track than the vehicle's projection. Returns the steering angle
// (positive = left), clamped to +-cfg.expert_max_steering.
inline double expert_steering(const VehicleState& state, const Track& track, int lane,
                              const WorldConfig& cfg) {
  const auto proj = track.checked_projection(state.pose.position());
  if (std::abs(proj.lateral) > track.road_half_width()) {
    throw OffTrackError("expert: vehicle is off the road");
  }
  const Pose target = track.point_at(proj.s + cfg.lookahead, track.lane_offset(lane));
  const Vec2 local = to_local(state.pose, target.position());
  const double ld = norm(local);
  if (!(ld > 1e-9)) return 0.0;
  const double alpha = std::atan2(local.y, local.x);
  const double steering = std::atan(2.0 * cfg.vehicle.wheelbase * std::sin(alpha) / ld);
  return std::clamp(steering, -cfg.expert_max_steering, cfg.expert_max_steering);
}

}  // namespace lanepilot::sim
