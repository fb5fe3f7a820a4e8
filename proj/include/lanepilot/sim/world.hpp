#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lanepilot/common/error.hpp"
#include "lanepilot/sim/geometry.hpp"
#include "lanepilot/sim/track.hpp"
#include "lanepilot/sim/vehicle.hpp"

namespace lanepilot::sim {

struct WorldConfig {
  std::string profile = "campus";
  double dt = 0.02;               // physics step, s
  double sensor_rate_hz = 10.0;   // sensing, decisions and telemetry
  double detect_distance = 20.0;  // D, m
  double sensor_range = 30.0;     // R, m
  double center_half_angle_deg = 15.0;
  double side_outer_angle_deg = 60.0;
  double ray_step_deg = 1.0;
  double camera_ahead = 20.0;   // m covered by the frame, forward
  double camera_width = 6.6;    // m covered by the frame, lateral
  std::size_t frame_height = 66;
  std::size_t frame_width = 200;
  double stroke_width = 0.12;   // lane line width, m
  double lookahead = 4.0;       // expert pure-pursuit lookahead, m
  double expert_max_steering = 0.5;
  VehicleParams vehicle;

  static WorldConfig campus() { return {}; }

  static WorldConfig tiny() {
    WorldConfig c;
    c.profile = "tiny";
    c.frame_height = 32;
    c.frame_width = 64;
    return c;
  }

  static WorldConfig from_profile(const std::string& name) {
    if (name == "campus" || name == "full") return campus();
    if (name == "tiny") return tiny();
    throw ConfigError("unknown world profile '" + name + "' (expected campus or tiny)");
  }

  double tick_period() const { return 1.0 / sensor_rate_hz; }

  // Physics steps per sensing tick (5 at the defaults).
  std::size_t steps_per_tick() const {
    return static_cast<std::size_t>(std::lround(tick_period() / dt));
  }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(detect_distance > 0.0)) throw ConfigError("detection distance must be positive");
    if (!(sensor_range > 0.0)) throw ConfigError("sensor range must be positive");
    if (!(sensor_rate_hz > 0.0)) throw ConfigError("sensor rate must be positive");
    if (steps_per_tick() == 0 ||
        std::abs(static_cast<double>(steps_per_tick()) * dt - tick_period()) > 1e-9) {
      throw ConfigError("sensor period must be a whole number of physics steps");
    }
    if (frame_height == 0 || frame_width == 0) throw ConfigError("frame dimensions must be positive");
    if (!(center_half_angle_deg > 0.0) || !(side_outer_angle_deg > center_half_angle_deg)) {
      throw ConfigError("zone angles must satisfy 0 < center < side");
    }
  }
};

// Disk obstacle travelling along a lane center (static iff speed == 0).
struct Obstacle {
  Pose pose;
  double s = 0.0;  // arc length along the track
  double speed = 0.0;
  double radius = 0.3;
  int lane = 2;

  bool is_static() const { return speed == 0.0; }
};

inline Obstacle make_obstacle(const Track& track, int lane, double s, double speed, double radius) {
  if (!(radius > 0.0)) throw ConfigError("obstacle radius must be positive");
  Obstacle o;
  o.s = track.wrap_s(s);
  o.lane = lane;
  o.speed = speed;
  o.radius = radius;
  o.pose = track.point_at(o.s, track.lane_offset(lane));
  return o;
}

// Actuator command held between sensing ticks.
struct Actuation {
  double omega = 0.0;
  double target_speed = 0.0;
};

struct World {
  Track track;
  std::vector<Obstacle> obstacles;
  VehicleState ego;
  WorldConfig cfg;
  Actuation command;
  double time = 0.0;
  bool collision = false;              // overlap on the most recent step
  std::vector<std::size_t> colliding;  // obstacle indices overlapping on that step
};

// One physics step: ego tracks its command, obstacles advance along their
// lanes, and disk overlap sets the collision flag.
inline void step_world(World& w, double dt) {
  w.ego.speed = approach_speed(w.ego.speed, w.command.target_speed, dt, w.cfg.vehicle);
  w.ego = step_vehicle(w.ego, w.command.omega, dt);
  for (auto& o : w.obstacles) {
    if (o.speed == 0.0) continue;
    o.s = w.track.wrap_s(o.s + o.speed * dt);
    o.pose = w.track.point_at(o.s, w.track.lane_offset(o.lane));
  }
  w.colliding.clear();
  for (std::size_t i = 0; i < w.obstacles.size(); ++i) {
    const auto& o = w.obstacles[i];
    if (norm(o.pose.position() - w.ego.pose.position()) < o.radius + w.cfg.vehicle.radius) {
      w.colliding.push_back(i);
    }
  }
  w.collision = !w.colliding.empty();
  w.time += dt;
}

}  // namespace lanepilot::sim
