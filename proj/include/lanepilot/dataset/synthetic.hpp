#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lanepilot/common/error.hpp"
#include "lanepilot/common/rng.hpp"
#include "lanepilot/dataset/dataset.hpp"
#include "lanepilot/sim/expert.hpp"
#include "lanepilot/sim/render.hpp"
#include "lanepilot/sim/track.hpp"
#include "lanepilot/sim/vehicle.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::dataset {

// Perturbations re-rendered around every base frame.
struct AugmentSpec {
  std::vector<double> shifts{0.2, -0.2, 0.4, -0.4};       // lateral, m (+left)
  std::vector<double> rotations{0.05, -0.05, 0.10, -0.10};  // heading, rad (+left)

  std::size_t per_frame() const { return 1 + shifts.size() + rotations.size(); }

  nlohmann::json to_json() const { return {{"shifts", shifts}, {"rotations", rotations}}; }
};

struct SyntheticOptions {
  std::size_t frames_per_run = 50;  // consecutive expert frames per start point (5 s)
  double start_lateral_jitter = 0.08;
  double start_heading_jitter = 0.03;
};

namespace detail {

// Copy of a pose moved to `d` meters from the center of `lane`, measured
// perpendicular to the local track direction. Heading is kept.
inline sim::VehicleState shifted(const sim::VehicleState& s, const sim::Track& track, int lane,
                                 double d) {
  const auto proj = track.project(s.pose.position());
  const sim::Pose p = track.point_at(proj.s, track.lane_offset(lane) + d);
  sim::VehicleState out = s;
  out.pose.x = p.x;
  out.pose.y = p.y;
  return out;
}

}  // namespace detail

// Drives the scripted expert along the track and records (frame, expert
// steering) at the sensing rate. Base frames are split into short runs that
// start at evenly spaced points along the track, cycling through lanes 1-3,
// each with a seeded small pose perturbation. Every base frame is followed by
// one re-rendered frame per AugmentSpec offset, labeled with the expert's
// command at the perturbed pose. Lateral shifts are taken from the lane
// center; rotations are applied to the recorded pose.
inline DatasetManifest generate_synthetic(const sim::Track& track, const sim::WorldConfig& cfg,
                                          std::size_t n_frames, const AugmentSpec& augment,
                                          std::uint64_t seed, const SyntheticOptions& opt = {}) {
  cfg.validate();
  if (n_frames == 0) throw ConfigError("generate_synthetic: n_frames must be >= 1");
  if (opt.frames_per_run == 0) throw ConfigError("frames_per_run must be >= 1");

  DatasetManifest m;
  m.height = cfg.frame_height;
  m.width = cfg.frame_width;
  m.provenance = Provenance::Synthetic;
  m.seed = seed;
  m.extra = {{"augment", augment.to_json()}, {"base_frames", n_frames}};
  m.samples.reserve(n_frames * augment.per_frame());
  m.frames.reserve(n_frames * augment.per_frame());

  const std::size_t runs = (n_frames + opt.frames_per_run - 1) / opt.frames_per_run;
  const double speed = cfg.vehicle.cruise_speed;
  const double run_distance = speed * static_cast<double>(opt.frames_per_run) * cfg.tick_period();
  double usable = track.length();
  if (!track.closed()) usable -= run_distance + cfg.lookahead + 2.0;
  if (!(usable > 0.0)) throw ConfigError("generate_synthetic: track too short for a run");

  Rng rng(mix_seed(seed, 0xDA7Aull));
  const std::int64_t tick_us = std::llround(cfg.tick_period() * 1e6);
  std::int64_t tick = 0;
  std::size_t produced = 0;
  const std::vector<sim::Obstacle> no_obstacles;

  auto record = [&](const sim::VehicleState& s, int lane) {
    const auto proj = track.project(s.pose.position());
    if (proj.beyond_start || proj.beyond_end ||
        std::abs(proj.lateral) >= track.road_half_width()) {
      throw ConfigError("augmentation offset leaves the drivable area");
    }
    const double label = sim::expert_steering(s, track, lane, cfg);
    const std::size_t idx = m.samples.size();
    m.frames.push_back(sim::render_camera(s, track, no_obstacles, cfg));
    m.samples.push_back({tick * tick_us, frame_file_name(idx), label, s.speed});
  };

  for (std::size_t run = 0; run < runs && produced < n_frames; ++run) {
    const int lane = static_cast<int>(run % 3) + 1;
    const double s0 = usable * static_cast<double>(run) / static_cast<double>(runs);
    const double lat_jitter = rng.uniform(-opt.start_lateral_jitter, opt.start_lateral_jitter);
    const double head_jitter = rng.uniform(-opt.start_heading_jitter, opt.start_heading_jitter);
    const sim::Pose base = track.point_at(s0, track.lane_offset(lane) + lat_jitter);
    sim::VehicleState state;
    state.pose = {base.x, base.y, sim::wrap_angle(base.heading + head_jitter)};
    state.speed = speed;

    for (std::size_t k = 0; k < opt.frames_per_run && produced < n_frames; ++k, ++produced, ++tick) {
      if (std::abs(track.cross_track_error(state.pose, lane)) > track.lane_width() / 2.0) {
        throw ConfigError("generate_synthetic: expert left its lane");
      }
      record(state, lane);
      for (double d : augment.shifts) record(detail::shifted(state, track, lane, d), lane);
      for (double r : augment.rotations) {
        sim::VehicleState rotated = state;
        rotated.pose.heading = sim::wrap_angle(state.pose.heading + r);
        record(rotated, lane);
      }
      const double steer = sim::expert_steering(state, track, lane, cfg);
      state.steering = steer;
      const double omega = sim::steering_to_omega(steer, state.speed, cfg.vehicle);
      for (std::size_t step = 0; step < cfg.steps_per_tick(); ++step) {
        state = sim::step_vehicle(state, omega, cfg.dt);
      }
    }
  }
  return m;
}

}  // namespace lanepilot::dataset
