#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lanepilot/avoidance/controller.hpp"
#include "lanepilot/common/hash.hpp"
#include "lanepilot/common/rng.hpp"
#include "lanepilot/eval/autonomy.hpp"
#include "lanepilot/eval/runlog.hpp"
#include "lanepilot/nn/model_io.hpp"
#include "lanepilot/nn/network.hpp"
#include "lanepilot/sim/render.hpp"
#include "lanepilot/sim/scenario.hpp"
#include "lanepilot/sim/sensors.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::eval {

// Automatic safety driver.
struct OracleConfig {
  double k_cte = 1.0;
  double k_heading = 2.0;
  double threshold = -1.0;      // |cte| that triggers; < 0 means lane_width / 2
  std::size_t hold_ticks = 50;  // exclusive control span (5 s at 10 Hz)

  double trigger_distance(double lane_width) const { return threshold < 0.0 ? lane_width / 2.0 : threshold; }
};

// Returns the trigger description when the oracle must take over: the
// vehicle has left its lane or has just collided.
inline std::optional<std::string> oracle_trigger(double cte, double lane_width, bool collided,
                                                 const OracleConfig& cfg = {}) {
  if (collided) return std::string("collision");
  if (std::abs(cte) > cfg.trigger_distance(lane_width)) {
    return "lane departure (cte " + format_double(cte) + " m)";
  }
  return std::nullopt;
}

// Proportional recovery toward the lane center.
inline double oracle_recovery_omega(double cte, double heading_error, double omega_max,
                                    const OracleConfig& cfg = {}) {
  return std::clamp(-cfg.k_cte * cte - cfg.k_heading * heading_error, -omega_max, omega_max);
}

enum class EpisodeMode { Oracle, Human, Teleop };

inline const char* to_string(EpisodeMode m) {
  switch (m) {
    case EpisodeMode::Oracle: return "oracle";
    case EpisodeMode::Human: return "human";
    case EpisodeMode::Teleop: return "teleop";
  }
  return "?";
}

// Human steering input, held until replaced.
struct HumanControl {
  double steering = 0.0;  // rad, [-pi/2, pi/2]
  double throttle = 0.0;  // [0, 1] of v_max
};

// Inputs drained from the service queue for one tick.
struct TickInput {
  std::optional<HumanControl> control;
  bool takeover_begin = false;
  bool takeover_end = false;
};

struct EpisodeOptions {
  EpisodeMode mode = EpisodeMode::Oracle;
  double duration = 300.0;  // s
  std::uint64_t seed = 1;
  avoidance::Thresholds thresholds;
  OracleConfig oracle;
  // Seeded start-pose perturbation (uniform, +-), off by default.
  double start_lateral_jitter = 0.0;
  double start_heading_jitter = 0.0;
};

inline std::string model_digest(const nn::Network& net) { return to_hex(fnv1a64(nn::serialize_model(net))); }

// Closed-loop episode advanced one sensing tick at a time. In oracle mode the
// safety oracle supplies interventions; in human mode takeovers come from
// TickInput; in teleop mode the human drives throughout.
class Episode {
 public:
  Episode(const sim::Scenario& scenario, const nn::Network& net, EpisodeOptions opt)
      : Episode(scenario, &net, std::move(opt)) {}

  // Teleop needs no network; frames render at the scenario resolution.
  Episode(const sim::Scenario& scenario, EpisodeOptions opt) : Episode(scenario, nullptr, std::move(opt)) {
    if (opt_.mode != EpisodeMode::Teleop) throw ConfigError("only teleop episodes may run without a model");
  }

  bool done() const { return finished_ || elapsed() + 1e-9 >= opt_.duration; }
  double elapsed() const { return static_cast<double>(log_.ticks.size()) * world_.cfg.tick_period(); }

  double live_autonomy() const {
    return compute_autonomy(log_.interventions.size(), std::max(elapsed(), world_.cfg.tick_period()));
  }

  bool intervention_active() const { return oracle_ticks_left_ > 0 || takeover_active_; }
  const sim::World& world() const { return world_; }
  const RunLog& log() const { return log_; }
  const avoidance::Controller& controller() const { return controller_; }
  const sim::CameraFrame& last_frame() const { return last_frame_; }
  const sim::ZoneReadings& last_zones() const { return last_zones_; }
  const HumanControl& held_control() const { return held_; }
  const EpisodeOptions& options() const { return opt_; }

  // Runs one decision tick and the physics steps that follow it.
  const TickRecord& step(const TickInput& in = {}) {
    if (done()) throw Error("episode already finished");
    if (in.control) held_ = clamp_control(*in.control);
    const auto proj = world_.track.project(world_.ego.pose.position());
    if (proj.beyond_start || proj.beyond_end) {
      finished_ = true;
      throw OffTrackError("vehicle left the ends of the track");
    }
    const double heading_err = sim::wrap_angle(world_.ego.pose.heading - proj.heading);

    TickRecord rec;
    rec.tick = log_.ticks.size();
    rec.time = world_.time;
    rec.x = world_.ego.pose.x;
    rec.y = world_.ego.pose.y;
    rec.heading = world_.ego.pose.heading;
    rec.speed = world_.ego.speed;

    const auto source = choose_source(proj.lateral, heading_err, in);
    sim::Actuation act;
    if (source == Source::Autonomy) {
      const auto r = avoidance::tick(world_, *net_, controller_, opt_.thresholds);
      last_frame_ = r.frame;
      last_zones_ = r.zones;
      rec.estimate = avoidance::to_string(r.estimate.kind);
      rec.estimate_speed = r.estimate.speed;
      rec.cnn_steering = r.cnn_steering;
      rec.mode_before = avoidance::to_string(r.mode_before.kind);
      rec.mode_after = avoidance::to_string(r.mode_after.kind);
      act = r.command.actuation();
      rec.control = "autonomy";
    } else {
      last_zones_ = sim::sense_zones(world_.ego, world_.obstacles, world_.cfg);
      last_zones_.timestamp = world_.time;
      last_frame_ = sim::render_camera(world_.ego, world_.track, world_.obstacles, world_.cfg);
      rec.mode_before = rec.mode_after = avoidance::to_string(controller_.mode.kind);
      if (source == Source::Oracle) {
        const double cte = proj.lateral - world_.track.lane_offset(recovery_lane_);
        act = {oracle_recovery_omega(cte, heading_err, world_.cfg.vehicle.omega_max, opt_.oracle),
               world_.cfg.vehicle.cruise_speed};
        rec.control = "oracle";
      } else {
        act = {sim::steering_to_omega(held_.steering, world_.ego.speed, world_.cfg.vehicle),
               held_.throttle * world_.cfg.vehicle.v_max};
        rec.control = "human";
      }
    }
    rec.zone_left = last_zones_.left;
    rec.zone_center = last_zones_.center;
    rec.zone_right = last_zones_.right;
    rec.lane = controller_.mode.lane;
    rec.target_lane = controller_.mode.target_lane;
    rec.omega = act.omega;
    rec.target_speed = act.target_speed;
    rec.frame_hash = to_hex(last_frame_.hash());

    advance(act);
    // Re-anchor the clock on the tick grid so summed dt never drifts.
    world_.time = static_cast<double>(rec.tick + 1) / world_.cfg.sensor_rate_hz;
    finish_oracle_tick(source);
    log_.ticks.push_back(std::move(rec));
    log_.elapsed = elapsed();
    if (done()) close_takeover();
    return log_.ticks.back();
  }

  // Ends the episode now (e.g. a service session switching modes).
  void finish() {
    finished_ = true;
    close_takeover();
  }

 private:
  enum class Source { Autonomy, Oracle, Human };

  Episode(const sim::Scenario& scenario, const nn::Network* net, EpisodeOptions opt)
      : net_(net), opt_(std::move(opt)), world_(scenario.make_world()) {
    if (!scenario.thresholds.empty()) {
      opt_.thresholds = avoidance::Thresholds::from_json(scenario.thresholds, opt_.thresholds);
    }
    opt_.thresholds.validate();
    opt_.thresholds.tick_period = world_.cfg.tick_period();
    if (net_) {
      // The camera renders at whatever resolution the model was trained on;
      // the field of view is a property of the scenario.
      world_.cfg.frame_height = net_->config.input_height;
      world_.cfg.frame_width = net_->config.input_width;
    }
    if (opt_.start_lateral_jitter > 0.0 || opt_.start_heading_jitter > 0.0) {
      Rng rng(mix_seed(opt_.seed, 0xE915ull));
      const double dl = rng.uniform(-opt_.start_lateral_jitter, opt_.start_lateral_jitter);
      const double dh = rng.uniform(-opt_.start_heading_jitter, opt_.start_heading_jitter);
      const sim::Pose base =
          world_.track.point_at(scenario.ego_s, world_.track.lane_offset(scenario.ego_lane) + scenario.ego_lateral + dl);
      world_.ego.pose = {base.x, base.y, sim::wrap_angle(base.heading + scenario.ego_heading + dh)};
    }
    controller_.reset(scenario.ego_lane);
    held_.throttle = world_.ego.speed / world_.cfg.vehicle.v_max;
    log_.scenario = scenario.name;
    log_.seed = opt_.seed;
    log_.model_digest = net_ ? model_digest(*net_) : "none";
    log_.mode = to_string(opt_.mode);
    log_.duration = opt_.duration;
  }

  HumanControl clamp_control(HumanControl c) const {
    c.steering = std::clamp(c.steering, -sim::kPi / 2.0, sim::kPi / 2.0);
    c.throttle = std::clamp(c.throttle, 0.0, 1.0);
    return c;
  }

  // Lane the oracle steers back to: the assigned lane, or during a lane
  // change whichever of origin/target is nearer.
  int assigned_lane(double lateral) const {
    const auto& m = controller_.mode;
    if (!m.changing_lane()) return m.lane;
    const auto& t = world_.track;
    return std::abs(lateral - t.lane_offset(m.target_lane)) <= std::abs(lateral - t.lane_offset(m.lane))
               ? m.target_lane
               : m.lane;
  }

  Source choose_source(double lateral, double heading_err, const TickInput& in) {
    (void)heading_err;
    switch (opt_.mode) {
      case EpisodeMode::Teleop:
        return Source::Human;
      case EpisodeMode::Human:
        if (in.takeover_begin && !takeover_active_) {
          takeover_active_ = true;
          takeover_start_ = world_.time;
          log_.interventions.push_back({world_.time, kInterventionSeconds, InterventionSource::Human, "takeover", 0.0});
        }
        if (in.takeover_end && takeover_active_) close_takeover();
        return takeover_active_ ? Source::Human : Source::Autonomy;
      case EpisodeMode::Oracle:
        break;
    }
    if (oracle_ticks_left_ > 0) return Source::Oracle;
    const int lane = assigned_lane(lateral);
    const double cte = lateral - world_.track.lane_offset(lane);
    if (auto why = oracle_trigger(cte, world_.track.lane_width(), pending_collision_, opt_.oracle)) {
      log_.interventions.push_back({world_.time, kInterventionSeconds, InterventionSource::Oracle, *why,
                                    static_cast<double>(opt_.oracle.hold_ticks) * world_.cfg.tick_period()});
      oracle_ticks_left_ = opt_.oracle.hold_ticks;
      recovery_lane_ = lane;
      pending_collision_ = false;
      return Source::Oracle;
    }
    pending_collision_ = false;
    return Source::Autonomy;
  }

  void close_takeover() {
    if (!takeover_active_) return;
    takeover_active_ = false;
    log_.interventions.back().actual_span = world_.time - takeover_start_;
    const auto proj = world_.track.project(world_.ego.pose.position());
    controller_.reset(world_.track.nearest_lane(proj.lateral));
  }

  void finish_oracle_tick(Source source) {
    if (source != Source::Oracle) return;
    if (--oracle_ticks_left_ == 0) controller_.reset(recovery_lane_);
  }

  // Physics steps for one tick. A collision is counted once and the
  // obstacle is removed so the vehicle is not stuck inside it.
  void advance(const sim::Actuation& act) {
    world_.command = act;
    const std::size_t steps = world_.cfg.steps_per_tick();
    for (std::size_t k = 0; k < steps; ++k) {
      sim::step_world(world_, world_.cfg.dt);
      log_.distance += world_.ego.speed * world_.cfg.dt;
      if (world_.collision) {
        ++log_.collisions;
        pending_collision_ = true;
        for (auto it = world_.colliding.rbegin(); it != world_.colliding.rend(); ++it) {
          world_.obstacles.erase(world_.obstacles.begin() + static_cast<std::ptrdiff_t>(*it));
        }
        world_.colliding.clear();
        world_.collision = false;
      }
    }
  }

  const nn::Network* net_;
  EpisodeOptions opt_;
  sim::World world_;
  avoidance::Controller controller_;
  RunLog log_;
  HumanControl held_;
  sim::CameraFrame last_frame_;
  sim::ZoneReadings last_zones_;
  std::size_t oracle_ticks_left_ = 0;
  int recovery_lane_ = 2;
  bool pending_collision_ = false;
  bool takeover_active_ = false;
  double takeover_start_ = 0.0;
  bool finished_ = false;
};

// Runs an episode to completion as fast as possible. `inputs`, if given,
// supplies the human/teleop input for each tick index.
template <typename InputFn>
RunLog run_episode(const sim::Scenario& scenario, const nn::Network& net, const EpisodeOptions& opt,
                   InputFn&& inputs) {
  Episode ep(scenario, net, opt);
  while (!ep.done()) {
    try {
      ep.step(inputs(ep.log().ticks.size()));
    } catch (const OffTrackError&) {
      break;  // open track ran out; the log ends at the last full tick
    }
  }
  return ep.log();
}

inline RunLog run_episode(const sim::Scenario& scenario, const nn::Network& net, const EpisodeOptions& opt = {}) {
  return run_episode(scenario, net, opt, [](std::size_t) { return TickInput{}; });
}

}  // namespace lanepilot::eval
