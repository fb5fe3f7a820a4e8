#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "lanepilot/avoidance/decision.hpp"
#include "lanepilot/nn/network.hpp"
#include "lanepilot/sim/render.hpp"
#include "lanepilot/sim/sensors.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::avoidance {

// Mode plus the rolling center-zone history that classification needs.
struct Controller {
  ControllerMode mode;
  std::deque<RangeSample> history;

  void reset(int lane = 2) {
    mode = ControllerMode{};
    mode.lane = mode.target_lane = lane;
    history.clear();
  }
};

// Everything one arbitration tick saw and decided; the run log stores it.
struct TickResult {
  sim::ZoneReadings zones;
  ObstacleEstimate estimate;
  double cnn_steering = 0.0;
  ControllerMode mode_before;
  ControllerMode mode_after;
  ControlCommand command;
  sim::CameraFrame frame;
};

inline LaneContext lane_context(const sim::World& w) {
  const auto proj = w.track.project(w.ego.pose.position());
  return {proj.lateral, sim::wrap_angle(w.ego.pose.heading - proj.heading), w.track.lane_width()};
}

// Sense, classify, run the CNN on the current frame and decide.
inline TickResult tick(const sim::World& w, const nn::Network& net, Controller& ctl, const Thresholds& th) {
  TickResult r;
  r.zones = sim::sense_zones(w.ego, w.obstacles, w.cfg);
  r.zones.timestamp = w.time;
  ctl.history.push_back({w.time, r.zones.center, w.ego.speed});
  while (ctl.history.size() > th.history_window) ctl.history.pop_front();
  const std::vector<RangeSample> hist(ctl.history.begin(), ctl.history.end());
  r.estimate = classify_obstacle(hist, th, w.cfg.sensor_range);

  r.frame = sim::render_camera(w.ego, w.track, w.obstacles, w.cfg);
  r.cnn_steering = static_cast<double>(nn::predict_steering(net, r.frame.to_tensor()));

  r.mode_before = ctl.mode;
  r.command = decide(r.zones, r.estimate, ctl.mode, r.cnn_steering, w.ego, th, lane_context(w),
                     w.cfg.vehicle);
  r.command.omega = std::clamp(r.command.omega, -w.cfg.vehicle.omega_max, w.cfg.vehicle.omega_max);
  r.mode_after = ctl.mode;
  return r;
}

}  // namespace lanepilot::avoidance
