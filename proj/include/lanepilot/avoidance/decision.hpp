#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "json.hpp"
#include "lanepilot/common/error.hpp"
#include "lanepilot/sim/geometry.hpp"
#include "lanepilot/sim/sensors.hpp"
#include "lanepilot/sim/vehicle.hpp"

namespace lanepilot::avoidance {

enum class Mode { CnnFollow, SpeedMatch, LaneChangeLeft, LaneChangeRight, Stopped };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::CnnFollow: return "CNN_FOLLOW";
    case Mode::SpeedMatch: return "SPEED_MATCH";
    case Mode::LaneChangeLeft: return "LANE_CHANGE_LEFT";
    case Mode::LaneChangeRight: return "LANE_CHANGE_RIGHT";
    case Mode::Stopped: return "STOPPED";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::CnnFollow, Mode::SpeedMatch, Mode::LaneChangeLeft, Mode::LaneChangeRight,
                 Mode::Stopped}) {
    if (s == to_string(m)) return m;
  }
  throw FormatError("unknown controller mode '" + s + "'");
}

// Lane-change sub-phases: turn toward the target lane, hold the heading while
// crossing, then counter-steer back to the lane direction.
enum class Phase { TurnIn, Hold, Realign };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::TurnIn: return "turn_in";
    case Phase::Hold: return "hold";
    case Phase::Realign: return "realign";
  }
  return "?";
}

struct ControllerMode {
  Mode kind = Mode::CnnFollow;
  int lane = 2;         // lane currently occupied (origin lane during a change)
  int target_lane = 2;  // destination during a lane change, else == lane
  Phase phase = Phase::TurnIn;
  int clear_ticks = 0;          // SPEED_MATCH exit hysteresis counter
  double matched_speed = 0.0;   // last SPEED_MATCH target

  bool changing_lane() const { return kind == Mode::LaneChangeLeft || kind == Mode::LaneChangeRight; }

  friend bool operator==(const ControllerMode&, const ControllerMode&) = default;
};

struct ControlCommand {
  double omega = 0.0;         // rad/s, positive = left
  double target_speed = 0.0;  // m/s
  Mode mode = Mode::CnnFollow;

  sim::Actuation actuation() const { return {omega, target_speed}; }

  friend bool operator==(const ControlCommand&, const ControlCommand&) = default;
};

enum class ObstacleKind { None, Static, Moving };

inline const char* to_string(ObstacleKind k) {
  switch (k) {
    case ObstacleKind::None: return "none";
    case ObstacleKind::Static: return "static";
    case ObstacleKind::Moving: return "moving";
  }
  return "?";
}

struct ObstacleEstimate {
  ObstacleKind kind = ObstacleKind::None;
  double speed = 0.0;     // estimated obstacle speed along the lane, m/s
  double distance = 0.0;  // newest center reading; the sensor range when kind is none
  bool insufficient_history = false;
};

struct Thresholds {
  double detect_distance = 20.0;      // D
  double lane_clear_distance = 20.0;  // side zone must read at least this to count as clear
  double maneuver_omega = 0.5;        // rad/s
  double heading_limit = sim::deg_to_rad(60.0);
  double static_epsilon = 0.2;        // m/s
  std::size_t history_window = 5;     // readings
  double tick_period = 0.1;           // s between readings
  double lane_epsilon = 0.1;          // m, lateral tolerance on the target lane center
  double exit_margin = 1.0;           // SPEED_MATCH exits once center >= D + margin ...
  int exit_ticks = 3;                 // ... for this many consecutive ticks
  double abort_distance = 2.0;        // m, center reading that aborts a lane change

  void validate() const {
    if (!(detect_distance > 0) || !(lane_clear_distance > 0) || !(maneuver_omega > 0) ||
        !(heading_limit > 0) || !(static_epsilon > 0) || history_window < 2 || !(tick_period > 0) ||
        !(lane_epsilon > 0) || !(exit_margin > 0) || exit_ticks < 1 || !(abort_distance > 0)) {
      throw ConfigError("avoidance thresholds must be positive (history window >= 2)");
    }
  }

  nlohmann::json to_json() const {
    return {{"detect_distance", detect_distance},
            {"lane_clear_distance", lane_clear_distance},
            {"maneuver_omega", maneuver_omega},
            {"heading_limit_deg", heading_limit * 180.0 / sim::kPi},
            {"static_epsilon", static_epsilon},
            {"history_window", history_window},
            {"tick_period", tick_period},
            {"lane_epsilon", lane_epsilon},
            {"exit_margin", exit_margin},
            {"exit_ticks", exit_ticks},
            {"abort_distance", abort_distance}};
  }

  // Overrides from a scenario's "thresholds" object; unknown keys are errors.
  static Thresholds from_json(const nlohmann::json& j) { return from_json(j, Thresholds{}); }

  static Thresholds from_json(const nlohmann::json& j, Thresholds th) {
    if (!j.is_object()) throw ConfigError("thresholds must be a JSON object");
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "detect_distance") th.detect_distance = v.get<double>();
        else if (k == "lane_clear_distance") th.lane_clear_distance = v.get<double>();
        else if (k == "maneuver_omega") th.maneuver_omega = v.get<double>();
        else if (k == "heading_limit_deg") th.heading_limit = sim::deg_to_rad(v.get<double>());
        else if (k == "static_epsilon") th.static_epsilon = v.get<double>();
        else if (k == "history_window") th.history_window = v.get<std::size_t>();
        else if (k == "tick_period") th.tick_period = v.get<double>();
        else if (k == "lane_epsilon") th.lane_epsilon = v.get<double>();
        else if (k == "exit_margin") th.exit_margin = v.get<double>();
        else if (k == "exit_ticks") th.exit_ticks = v.get<int>();
        else if (k == "abort_distance") th.abort_distance = v.get<double>();
        else throw ConfigError("unknown threshold '" + k + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed thresholds: ") + e.what());
    }
    th.validate();
    return th;
  }
};

// One center-zone reading with the ego speed at the same tick.
struct RangeSample {
  double time = 0.0;
  double center = 0.0;
  double ego_speed = 0.0;
};

// Closing-rate classification over the most recent `history_window`
// samples. Readings at the sensor range (nothing seen) are ignored, so an
// obstacle that just came into view is not mistaken for a fast approach.
// Obstacle speed = mean ego speed - (d_oldest - d_newest) / dt.
inline ObstacleEstimate classify_obstacle(std::span<const RangeSample> history, const Thresholds& th,
                                          double sensor_range) {
  ObstacleEstimate est;
  est.distance = sensor_range;
  if (history.empty()) {
    est.insufficient_history = true;
    return est;
  }
  if (history.back().center >= th.detect_distance) return est;

  const std::size_t n = std::min(history.size(), th.history_window);
  const auto window = history.subspan(history.size() - n);
  const RangeSample* oldest = nullptr;
  std::size_t valid = 0;
  double speed_sum = 0.0;
  for (const auto& s : window) {
    if (s.center >= sensor_range) continue;
    if (!oldest) oldest = &s;
    ++valid;
    speed_sum += s.ego_speed;
  }
  const RangeSample& newest = window.back();
  if (valid < 2 || !(newest.time > oldest->time)) {
    est.insufficient_history = true;
    return est;
  }
  const double closing = (oldest->center - newest.center) / (newest.time - oldest->time);
  est.speed = speed_sum / static_cast<double>(valid) - closing;
  est.distance = newest.center;
  est.kind = std::abs(est.speed) < th.static_epsilon ? ObstacleKind::Static : ObstacleKind::Moving;
  return est;
}

// Where the vehicle sits relative to the road, measured by the caller from
// the track: lateral offset from the centerline (+left) and heading minus
// the local track direction.
struct LaneContext {
  double lateral = 0.0;
  double heading_error = 0.0;
  double lane_width = 1.0;

  double lane_offset(int lane) const { return static_cast<double>(2 - lane) * lane_width; }

  int nearest_lane() const {
    return std::clamp(2 - static_cast<int>(std::lround(lateral / lane_width)), 1, 3);
  }
};

namespace detail {

inline ControlCommand follow(const ControllerMode& m, double cnn_steer, const sim::VehicleState& state,
                             const sim::VehicleParams& vp) {
  return {sim::steering_to_omega(cnn_steer, state.speed, vp), vp.cruise_speed, m.kind};
}

inline ControlCommand stop(ControllerMode& m) {
  m.kind = Mode::Stopped;
  m.target_lane = m.lane;
  m.clear_ticks = 0;
  return {0.0, 0.0, Mode::Stopped};
}

// Rules for a static obstacle ahead: change lanes if an adjacent lane exists
// and its zone is clear (left first), otherwise stop.
inline ControlCommand static_ahead(const sim::ZoneReadings& z, ControllerMode& m, const Thresholds& th,
                                   const sim::VehicleParams& vp) {
  const bool left_ok = m.lane > 1 && z.left >= th.lane_clear_distance;
  const bool right_ok = m.lane < 3 && z.right >= th.lane_clear_distance;
  if (!left_ok && !right_ok) return stop(m);
  m.kind = left_ok ? Mode::LaneChangeLeft : Mode::LaneChangeRight;
  m.target_lane = left_ok ? m.lane - 1 : m.lane + 1;
  m.phase = Phase::TurnIn;
  m.clear_ticks = 0;
  const double dir = left_ok ? 1.0 : -1.0;
  return {dir * th.maneuver_omega, vp.cruise_speed, m.kind};
}

// One tick of an active lane change. The crossing is sized so that the
// counter-steer at maneuver_omega lands on the target lane center: turning
// back from a deviation `dev` at speed v covers r(1 - cos dev) laterally,
// r = v / omega.
inline ControlCommand continue_lane_change(const sim::ZoneReadings& z, ControllerMode& m,
                                           const sim::VehicleState& state, const LaneContext& ctx,
                                           const Thresholds& th, const sim::VehicleParams& vp) {
  if (z.center < th.abort_distance) return stop(m);
  const double dir = m.kind == Mode::LaneChangeLeft ? 1.0 : -1.0;
  const double remaining = dir * (ctx.lane_offset(m.target_lane) - ctx.lateral);
  const double dev = dir * ctx.heading_error;
  const double r = std::max(state.speed, 0.0) / th.maneuver_omega;
  const double realign_span = r * (1.0 - std::cos(std::max(dev, 0.0)));

  // Decisions land on tick boundaries, so each phase ends on the tick that
  // leaves the smaller miss: stop turning in when one more tick of turning
  // would overshoot the lateral budget by more than stopping now falls short.
  if (m.phase == Phase::TurnIn) {
    const double step = th.maneuver_omega * th.tick_period;
    const double next_dev = dev + step;
    const double next_remaining = remaining - state.speed * th.tick_period * std::sin(dev + 0.5 * step);
    const double gap_now = remaining - realign_span;
    const double gap_next = next_remaining - r * (1.0 - std::cos(next_dev));
    if (dev >= th.heading_limit || gap_now <= 0.0 || (gap_next < 0.0 && -gap_next >= gap_now)) {
      m.phase = Phase::Hold;
    }
  }
  const double per_tick = 0.5 * state.speed * th.tick_period * std::sin(std::max(dev, 0.0));
  if (m.phase == Phase::Hold && remaining - realign_span <= std::max(th.lane_epsilon, per_tick)) {
    m.phase = Phase::Realign;
  }

  switch (m.phase) {
    case Phase::TurnIn:
      return {dir * th.maneuver_omega, vp.cruise_speed, m.kind};
    case Phase::Hold:
      return {0.0, vp.cruise_speed, m.kind};
    case Phase::Realign:
      break;
  }
  // Aligned once the remaining deviation is less than one tick of turning.
  if (dev <= 0.5 * th.maneuver_omega * th.tick_period) {
    m.kind = Mode::CnnFollow;
    m.lane = m.target_lane;
    m.phase = Phase::TurnIn;
    return {0.0, vp.cruise_speed, Mode::CnnFollow};
  }
  const double rate = std::min(th.maneuver_omega, dev / th.tick_period);
  return {-dir * rate, vp.cruise_speed, m.kind};
}

}  // namespace detail

// The decision tree, evaluated once per sensing tick. `mode` is updated in
// place and the command for the next tick is returned.
//
//   center >= D                      -> CNN_FOLLOW at cruise speed
//   center <  D, moving obstacle     -> SPEED_MATCH in the current lane
//   center <  D, static obstacle     -> LANE_CHANGE_LEFT / _RIGHT if that lane
//                                       exists and its zone reads >= the
//                                       lane-clear distance, else STOPPED
//   center <  D, not yet classified  -> keep the current behaviour
//
// An active lane change runs to completion (or aborts to STOPPED when the
// center zone closes within abort_distance). SPEED_MATCH is left only after
// center >= D + exit_margin for exit_ticks consecutive ticks.
inline ControlCommand decide(const sim::ZoneReadings& zones, const ObstacleEstimate& estimate,
                             ControllerMode& mode, double cnn_steer, const sim::VehicleState& state,
                             const Thresholds& th, const LaneContext& ctx = {},
                             const sim::VehicleParams& vp = {}) {
  if (mode.changing_lane()) {
    return detail::continue_lane_change(zones, mode, state, ctx, th, vp);
  }
  mode.lane = ctx.nearest_lane();
  mode.target_lane = mode.lane;

  ControlCommand cmd;
  if (zones.center >= th.detect_distance) {
    if (mode.kind == Mode::SpeedMatch) {
      mode.clear_ticks = zones.center >= th.detect_distance + th.exit_margin ? mode.clear_ticks + 1 : 0;
      if (mode.clear_ticks < th.exit_ticks) {
        cmd = detail::follow(mode, cnn_steer, state, vp);
        cmd.target_speed = mode.matched_speed;
        return cmd;
      }
    }
    mode.kind = Mode::CnnFollow;
    mode.clear_ticks = 0;
    return detail::follow(mode, cnn_steer, state, vp);
  }

  mode.clear_ticks = 0;
  switch (estimate.kind) {
    case ObstacleKind::Moving:
      mode.kind = Mode::SpeedMatch;
      mode.matched_speed = std::clamp(estimate.speed, 0.0, vp.cruise_speed);
      cmd = detail::follow(mode, cnn_steer, state, vp);
      cmd.target_speed = mode.matched_speed;
      return cmd;
    case ObstacleKind::Static:
      return detail::static_ahead(zones, mode, th, vp);
    case ObstacleKind::None:
      break;
  }
  switch (mode.kind) {
    case Mode::Stopped:
      return {0.0, 0.0, Mode::Stopped};
    case Mode::SpeedMatch:
      cmd = detail::follow(mode, cnn_steer, state, vp);
      cmd.target_speed = mode.matched_speed;
      return cmd;
    default:
      mode.kind = Mode::CnnFollow;
      return detail::follow(mode, cnn_steer, state, vp);
  }
}

}  // namespace lanepilot::avoidance
