#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lanepilot/common/error.hpp"
#include "lanepilot/sim/track.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::sim {

struct ObstacleSpec {
  int lane = 2;
  double s = 0.0;
  double speed = 0.0;
  double radius = 0.3;
};

// Initial conditions of an episode.
struct Scenario {
  std::string name;
  Track track;
  WorldConfig cfg;
  int ego_lane = 2;
  double ego_s = 0.0;
  double ego_lateral = 0.0;  // offset from the lane center, +left
  double ego_heading = 0.0;  // offset from the track direction, rad
  double ego_speed = -1.0;   // < 0 selects the cruise speed
  std::vector<ObstacleSpec> obstacles;
  nlohmann::json thresholds = nlohmann::json::object();

  World make_world() const {
    cfg.validate();
    World w;
    w.track = track;
    w.cfg = cfg;
    const Pose base = track.point_at(ego_s, track.lane_offset(ego_lane) + ego_lateral);
    w.ego.pose = {base.x, base.y, wrap_angle(base.heading + ego_heading)};
    w.ego.speed = ego_speed < 0.0 ? cfg.vehicle.cruise_speed : ego_speed;
    w.command = {0.0, w.ego.speed};
    for (const auto& o : obstacles) {
      w.obstacles.push_back(make_obstacle(track, o.lane, o.s, o.speed, o.radius));
    }
    return w;
  }
};

namespace detail {

template <typename T>
void override_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace detail

inline void apply_world_overrides(const nlohmann::json& j, WorldConfig& c) {
  using detail::override_field;
  override_field(j, "dt", c.dt);
  override_field(j, "sensor_rate_hz", c.sensor_rate_hz);
  override_field(j, "detect_distance", c.detect_distance);
  override_field(j, "sensor_range", c.sensor_range);
  override_field(j, "center_half_angle_deg", c.center_half_angle_deg);
  override_field(j, "side_outer_angle_deg", c.side_outer_angle_deg);
  override_field(j, "ray_step_deg", c.ray_step_deg);
  override_field(j, "camera_ahead", c.camera_ahead);
  override_field(j, "camera_width", c.camera_width);
  override_field(j, "frame_height", c.frame_height);
  override_field(j, "frame_width", c.frame_width);
  override_field(j, "stroke_width", c.stroke_width);
  override_field(j, "lookahead", c.lookahead);
  override_field(j, "expert_max_steering", c.expert_max_steering);
  override_field(j, "wheelbase", c.vehicle.wheelbase);
  override_field(j, "omega_max", c.vehicle.omega_max);
  override_field(j, "v_max", c.vehicle.v_max);
  override_field(j, "cruise_speed", c.vehicle.cruise_speed);
  override_field(j, "accel_limit", c.vehicle.accel_limit);
  override_field(j, "vehicle_radius", c.vehicle.radius);
}

// Scenario JSON:
// {
//   "name": "...", "profile": "campus" | "tiny",
//   "track": {...} | "track_file": "relative/or/absolute.json",
//   "ego": {"lane": 2, "s": 0, "lateral": 0, "heading_deg": 0, "speed": 2},
//   "obstacles": [{"lane": 2, "s": 14, "speed": 0, "radius": 0.3}],
//   "config": {world overrides}, "thresholds": {avoidance overrides}
// }
inline Scenario scenario_from_json(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir = {}) {
  try {
    Scenario sc;
    sc.name = j.value("name", std::string("unnamed"));
    sc.cfg = WorldConfig::from_profile(j.value("profile", std::string("campus")));
    if (j.contains("config")) apply_world_overrides(j.at("config"), sc.cfg);
    sc.cfg.validate();
    if (j.contains("track")) {
      sc.track = track_from_json(j.at("track"));
    } else if (j.contains("track_file")) {
      std::filesystem::path p = j.at("track_file").get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      std::ifstream f(p);
      if (!f) throw ConfigError("cannot open track file " + p.string());
      sc.track = track_from_json(nlohmann::json::parse(f));
    } else {
      throw ConfigError("scenario needs a track or track_file");
    }
    if (j.contains("ego")) {
      const auto& e = j.at("ego");
      sc.ego_lane = e.value("lane", 2);
      sc.ego_s = e.value("s", 0.0);
      sc.ego_lateral = e.value("lateral", 0.0);
      sc.ego_heading = deg_to_rad(e.value("heading_deg", 0.0));
      sc.ego_speed = e.value("speed", -1.0);
    }
    if (sc.ego_lane < 1 || sc.ego_lane > 3) throw ConfigError("ego lane must be 1, 2 or 3");
    if (j.contains("obstacles")) {
      for (const auto& o : j.at("obstacles")) {
        ObstacleSpec spec{o.value("lane", 2), o.value("s", 0.0), o.value("speed", 0.0),
                          o.value("radius", 0.3)};
        if (spec.lane < 1 || spec.lane > 3) throw ConfigError("obstacle lane must be 1, 2 or 3");
        sc.obstacles.push_back(spec);
      }
    }
    if (j.contains("thresholds")) sc.thresholds = j.at("thresholds");
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scenario JSON: ") + e.what());
  }
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open scenario file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario " + path.string() + " is not valid JSON: " + e.what());
  }
  return scenario_from_json(j, path.parent_path());
}

}  // namespace lanepilot::sim
