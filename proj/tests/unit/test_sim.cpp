#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "lanepilot/common/rng.hpp"
#include "lanepilot/sim/expert.hpp"
#include "lanepilot/sim/render.hpp"
#include "lanepilot/sim/scenario.hpp"
#include "lanepilot/sim/sensors.hpp"
#include "lanepilot/sim/track.hpp"
#include "lanepilot/sim/vehicle.hpp"
#include "lanepilot/sim/world.hpp"
#include "oracles/sim_oracle.hpp"

using namespace lanepilot;
using namespace lanepilot::sim;

namespace {

Track straight_track() { return Track({{-20.0, 0.0}, {480.0, 0.0}}, false); }

VehicleState at(double x, double y, double heading, double speed = 0.0) {
  VehicleState s;
  s.pose = {x, y, heading};
  s.speed = speed;
  return s;
}

Obstacle disk(double x, double y, double radius = 0.3) {
  Obstacle o;
  o.pose = {x, y, 0.0};
  o.radius = radius;
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Geometry and dynamics

TEST(Geometry, WrapAngleRange) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3.0 * kPi / 2.0), -kPi / 2.0, 1e-12);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_angle(rng.uniform(-50.0, 50.0));
    EXPECT_GT(a, -kPi);
    EXPECT_LE(a, kPi);
  }
}

TEST(SteeringToOmega, ZeroCases) {
  EXPECT_EQ(steering_to_omega(0.0, 2.0), 0.0);
  EXPECT_EQ(steering_to_omega(0.4, 0.0), 0.0);
}

TEST(SteeringToOmega, ClosedForm) {
  EXPECT_NEAR(steering_to_omega(0.245, 2.0), 2.0 * std::tan(0.245), 1e-15);
  EXPECT_NEAR(steering_to_omega(0.245, 2.0), 0.50, 5e-3);
}

TEST(SteeringToOmega, ClampsToOmegaMax) {
  EXPECT_DOUBLE_EQ(steering_to_omega(1.5, 8.0), 1.5);
  EXPECT_DOUBLE_EQ(steering_to_omega(-1.5, 8.0), -1.5);
}

TEST(StepVehicle, StraightLine) {
  const auto s = step_vehicle(at(0, 0, 0, 1.0), 0.0, 0.1);
  EXPECT_DOUBLE_EQ(s.pose.x, 0.1);
  EXPECT_EQ(s.pose.y, 0.0);
  EXPECT_EQ(s.pose.heading, 0.0);
}

TEST(StepVehicle, TurnInPlace) {
  const auto s = step_vehicle(at(1.5, -2.0, 0.3, 0.0), 0.5, 0.1);
  EXPECT_DOUBLE_EQ(s.pose.heading, 0.35);
  EXPECT_EQ(s.pose.x, 1.5);
  EXPECT_EQ(s.pose.y, -2.0);
}

TEST(StepVehicle, MatchesCircularArc) {
  VehicleState s = at(0, 0, 0, 1.0);
  for (int i = 0; i < 100; ++i) s = step_vehicle(s, 0.5, 0.02);
  const auto ref = oracle::circular_arc(1.0, 0.5, 2.0);
  EXPECT_LT(std::hypot(s.pose.x - ref.x, s.pose.y - ref.y), 2e-2);
  EXPECT_NEAR(s.pose.heading, 1.0, 1e-12);
}

TEST(StepVehicle, ZeroOmegaPreservesHeadingExactly) {
  VehicleState s = at(0, 0, 2.123456789, 3.0);
  for (int i = 0; i < 500; ++i) s = step_vehicle(s, 0.0, 0.02);
  EXPECT_EQ(s.pose.heading, 2.123456789);
}

TEST(StepVehicle, HeadingStaysWrapped) {
  VehicleState s = at(0, 0, 3.1, 1.0);
  for (int i = 0; i < 2000; ++i) {
    s = step_vehicle(s, 1.5, 0.02);
    ASSERT_GT(s.pose.heading, -kPi);
    ASSERT_LE(s.pose.heading, kPi);
  }
}

TEST(ApproachSpeed, RespectsAccelerationAndBounds) {
  VehicleParams p;
  EXPECT_DOUBLE_EQ(approach_speed(0.0, 2.0, 0.02, p), 0.04);
  EXPECT_DOUBLE_EQ(approach_speed(1.99, 2.0, 0.02, p), 2.0);
  EXPECT_DOUBLE_EQ(approach_speed(0.01, -5.0, 0.02, p), 0.0);
  EXPECT_DOUBLE_EQ(approach_speed(8.33, 100.0, 0.02, p), p.v_max);
}

// ---------------------------------------------------------------------------
// Track

TEST(Track, LaneLayout) {
  const Track t = straight_track();
  EXPECT_DOUBLE_EQ(t.lane_offset(1), 1.0);
  EXPECT_DOUBLE_EQ(t.lane_offset(2), 0.0);
  EXPECT_DOUBLE_EQ(t.lane_offset(3), -1.0);
  EXPECT_EQ(t.nearest_lane(0.9), 1);
  EXPECT_EQ(t.nearest_lane(-0.2), 2);
  EXPECT_EQ(t.nearest_lane(-7.0), 3);
  EXPECT_THROW(t.lane_offset(4), ConfigError);
}

TEST(Track, CrossTrackSignConvention) {
  const Track t = straight_track();
  EXPECT_EQ(t.cross_track_error({10.0, 0.0, 0.0}, 2), 0.0);
  EXPECT_DOUBLE_EQ(t.cross_track_error({10.0, 0.3, 0.0}, 2), 0.3);
  EXPECT_DOUBLE_EQ(t.cross_track_error({10.0, 0.3, 0.0}, 1), 0.3 - 1.0);
}

TEST(Track, CrossTrackBeyondEndsThrows) {
  const Track t = straight_track();
  EXPECT_THROW(t.cross_track_error({-25.0, 0.0, 0.0}, 2), OffTrackError);
  EXPECT_THROW(t.cross_track_error({481.0, 0.0, 0.0}, 2), OffTrackError);
}

TEST(Track, PolylineCornerMatchesBruteForce) {
  const std::vector<Vec2> pts{{0, 0}, {10, 0}, {15, 5}, {15, 12}, {8, 16}};
  const Track t(pts, false);
  std::vector<oracle::Point> ref;
  for (auto p : pts) ref.push_back({p.x, p.y});
  Rng rng(17);
  for (int i = 0; i < 60; ++i) {
    const Vec2 p{rng.uniform(2.0, 16.0), rng.uniform(-2.0, 14.0)};
    const auto proj = t.project(p);
    if (proj.beyond_start || proj.beyond_end) continue;
    EXPECT_NEAR(std::abs(proj.lateral), oracle::polyline_distance_sampled(ref, {p.x, p.y}), 2e-3)
        << "at (" << p.x << ", " << p.y << ")";
  }
}

TEST(Track, PolylineCornerSigns) {
  const Track t({{0, 0}, {10, 0}, {10, 10}}, false);  // left turn
  EXPECT_LT(t.project({11.0, -1.0}).lateral, 0.0);  // outside corner, right of travel
  EXPECT_GT(t.project({9.0, 1.0}).lateral, 0.0);    // inside corner, left
  EXPECT_NEAR(t.project({11.0, -1.0}).lateral, -std::sqrt(2.0), 1e-12);
}

TEST(Track, PointAtAndWrap) {
  const Track oval = make_oval_track(580.0, 50.0);
  EXPECT_NEAR(oval.length(), 580.0, 1e-9);
  EXPECT_NEAR(oval.wrap_s(590.0), 10.0, 1e-9);
  EXPECT_NEAR(oval.wrap_s(-10.0), 570.0, 1e-9);
  for (double s : {0.0, 37.5, 123.0, 300.0, 579.0}) {
    const Pose p = oval.point_at(s, -1.0);
    const auto proj = oval.project(p.position());
    EXPECT_NEAR(proj.lateral, -1.0, 1e-9);
    EXPECT_NEAR(proj.s, s, 1e-9);
  }
}

TEST(Track, DeclaredLengthChecked) {
  EXPECT_NO_THROW(Track({{0, 0}, {3, 4}}, false, 1.0, 3, 5.0));
  EXPECT_THROW(Track({{0, 0}, {3, 4}}, false, 1.0, 3, 5.1), ConfigError);
  EXPECT_THROW(Track({{0, 0}, {0, 0}}, false), ConfigError);
  EXPECT_THROW(Track({{0, 0}, {1, 0}}, false, 1.0, 2), ConfigError);
}

TEST(Track, JsonRoundTrip) {
  const Track t = make_oval_track(580.0, 50.0);
  const Track back = track_from_json(track_to_json(t));
  EXPECT_EQ(back.points().size(), t.points().size());
  EXPECT_DOUBLE_EQ(back.length(), t.length());
  EXPECT_TRUE(back.closed());
}

TEST(Track, ScenarioFilesLoad) {
  for (const char* name : {"campus_loop", "straight", "blocked_left", "training"}) {
    const auto sc = load_scenario(std::string(LANEPILOT_SCENARIO_DIR) + "/" + name + ".json");
    EXPECT_EQ(sc.name, name);
    EXPECT_NO_THROW(sc.make_world());
  }
  const auto loop = load_scenario(std::string(LANEPILOT_SCENARIO_DIR) + "/campus_loop.json");
  EXPECT_NEAR(loop.track.length(), 580.0, 1e-6);
}

TEST(Track, MalformedScenarioRejected) {
  EXPECT_THROW(scenario_from_json(nlohmann::json{{"name", "x"}}), ConfigError);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(R"({"track": {"points": 3}})")), ConfigError);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(
                   R"({"track": {"points": [[0,0],[1,0]]}, "obstacles": [{"lane": 5}]})")),
               ConfigError);
}

// ---------------------------------------------------------------------------
// Sensors

TEST(SenseZones, NoObstaclesReadsRange) {
  const WorldConfig cfg;
  const auto z = sense_zones(at(0, 0, 0.7), {}, cfg);
  EXPECT_EQ(z.left, cfg.sensor_range);
  EXPECT_EQ(z.center, cfg.sensor_range);
  EXPECT_EQ(z.right, cfg.sensor_range);
}

TEST(SenseZones, DeadAheadAtFourteen) {
  const WorldConfig cfg;
  // Ray origin sits on the 0.3 m chassis periphery; obstacle surface 14 m beyond it.
  const std::vector<Obstacle> obs{disk(0.3 + 14.0 + 0.05, 0.0, 0.05)};
  const auto z = sense_zones(at(0, 0, 0), obs, cfg);
  EXPECT_NEAR(z.center, 14.0, 1e-9);
  EXPECT_EQ(z.left, cfg.sensor_range);
  EXPECT_EQ(z.right, cfg.sensor_range);
}

TEST(SenseZones, LeftZoneMatchesRayMarchOracle) {
  const WorldConfig cfg;
  const double a = deg_to_rad(37.0);
  const double dist = 0.3 + 10.0 + 0.3;
  const std::vector<Obstacle> obs{disk(dist * std::cos(a), dist * std::sin(a))};
  const auto z = sense_zones(at(0, 0, 0), obs, cfg);

  double ref = cfg.sensor_range;
  for (int k = 16; k <= 60; ++k) {
    const double ang = deg_to_rad(k);
    const oracle::Point origin{0.3 * std::cos(ang), 0.3 * std::sin(ang)};
    ref = std::min(ref, oracle::march_to_disk(origin, ang, {obs[0].pose.x, obs[0].pose.y}, 0.3, 40.0));
  }
  EXPECT_NEAR(z.left, 10.0, 1e-6);
  EXPECT_NEAR(z.left, ref, 1e-6);
  EXPECT_EQ(z.center, cfg.sensor_range);
  EXPECT_EQ(z.right, cfg.sensor_range);
}

TEST(SenseZones, RandomWorldsAgreeWithOracle) {
  const WorldConfig cfg;
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    const VehicleState ego = at(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3));
    std::vector<Obstacle> obs;
    for (int i = 0; i < 3; ++i) {
      const double r = rng.uniform(3.0, 25.0), a = ego.pose.heading + rng.uniform(-1.2, 1.2);
      obs.push_back(disk(ego.pose.x + r * std::cos(a), ego.pose.y + r * std::sin(a), rng.uniform(0.2, 1.0)));
    }
    const auto z = sense_zones(ego, obs, cfg);
    double ref[3] = {cfg.sensor_range, cfg.sensor_range, cfg.sensor_range};  // left, center, right
    for (int k = -60; k <= 60; ++k) {
      const double ang = ego.pose.heading + deg_to_rad(k);
      const oracle::Point origin{ego.pose.x + 0.3 * std::cos(ang), ego.pose.y + 0.3 * std::sin(ang)};
      double d = cfg.sensor_range;
      for (const auto& o : obs) d = std::min(d, oracle::march_to_disk(origin, ang, {o.pose.x, o.pose.y}, o.radius, 31.0));
      double& slot = k > 15 ? ref[0] : (k < -15 ? ref[2] : ref[1]);
      slot = std::min(slot, d);
    }
    EXPECT_NEAR(z.left, ref[0], 1e-6);
    EXPECT_NEAR(z.center, ref[1], 1e-6);
    EXPECT_NEAR(z.right, ref[2], 1e-6);
  }
}

TEST(SenseZones, ReadingsStayInRange) {
  const WorldConfig cfg;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<Obstacle> obs{disk(rng.uniform(-2, 40), rng.uniform(-20, 20), rng.uniform(0.1, 3.0))};
    const auto z = sense_zones(at(0, 0, 0), obs, cfg);
    for (double r : {z.left, z.center, z.right}) {
      EXPECT_GT(r, 0.0);
      EXPECT_LE(r, cfg.sensor_range);
    }
  }
}

TEST(SenseZones, MirrorSwapsLeftAndRightExactly) {
  const WorldConfig cfg;
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const VehicleState ego = at(0, rng.uniform(-1, 1), rng.uniform(-0.3, 0.3));
    std::vector<Obstacle> obs, mirrored;
    for (int k = 0; k < 3; ++k) {
      obs.push_back(disk(rng.uniform(0, 30), rng.uniform(-8, 8), rng.uniform(0.2, 0.8)));
      mirrored.push_back(disk(obs.back().pose.x, -obs.back().pose.y, obs.back().radius));
    }
    const VehicleState ego_m = at(ego.pose.x, -ego.pose.y, -ego.pose.heading);
    const auto z = sense_zones(ego, obs, cfg);
    const auto zm = sense_zones(ego_m, mirrored, cfg);
    EXPECT_EQ(z.left, zm.right);
    EXPECT_EQ(z.right, zm.left);
    EXPECT_EQ(z.center, zm.center);
  }
}

// ---------------------------------------------------------------------------
// Camera

TEST(Render, CenteredFrameIsMirrorSymmetric) {
  for (const auto& cfg : {WorldConfig::campus(), WorldConfig::tiny()}) {
    const auto f = render_camera(at(10, 0, 0), straight_track(), {}, cfg);
    for (std::size_t r = 0; r < f.height; ++r) {
      for (std::size_t c = 0; c < f.width; ++c) {
        ASSERT_EQ(f.at(r, c), f.at(r, f.width - 1 - c)) << r << "," << c;
      }
    }
  }
}

TEST(Render, MirroredWorldRendersMirroredFrame) {
  const WorldConfig cfg = WorldConfig::tiny();
  const std::vector<Obstacle> obs{disk(18.0, 1.0, 0.5)}, mobs{disk(18.0, -1.0, 0.5)};
  const auto f = render_camera(at(10, 0.27, 0.05), straight_track(), obs, cfg);
  const auto g = render_camera(at(10, -0.27, -0.05), straight_track(), mobs, cfg);
  for (std::size_t r = 0; r < f.height; ++r) {
    for (std::size_t c = 0; c < f.width; ++c) ASSERT_EQ(f.at(r, c), g.at(r, f.width - 1 - c));
  }
}

TEST(Render, PixelOnBoundaryIsLine) {
  const WorldConfig cfg;
  // Place the vehicle so a pixel center lies exactly on the +0.5 m boundary.
  const Vec2 local = pixel_center_local(10, 40, cfg);
  const double y = 0.5 - local.y;
  const auto f = render_camera(at(10, y, 0), straight_track(), {}, cfg);
  EXPECT_EQ(f.at(10, 40), kLinePixel);
  EXPECT_EQ(f.at(10, 0), kBackgroundPixel);
}

TEST(Render, ObstacleDrawnAt128) {
  const WorldConfig cfg;
  const std::vector<Obstacle> obs{disk(20.0, 0.0, 0.5)};
  const auto f = render_camera(at(10, 0, 0), straight_track(), obs, cfg);
  // 10 m ahead, straight on: pixel row covering x_local = 10.
  const auto row = static_cast<std::size_t>(cfg.frame_height - 10.0 / (cfg.camera_ahead / cfg.frame_height));
  EXPECT_EQ(f.at(row, cfg.frame_width / 2), kObstaclePixel);
}

namespace {

std::vector<double> line_centroids(const CameraFrame& f, std::size_t row) {
  std::vector<double> out;
  std::size_t c = 0;
  while (c < f.width) {
    if (f.at(row, c) == kLinePixel) {
      std::size_t start = c;
      while (c < f.width && f.at(row, c) == kLinePixel) ++c;
      out.push_back(0.5 * static_cast<double>(start + c - 1));
    } else {
      ++c;
    }
  }
  return out;
}

}  // namespace

TEST(Render, LateralShiftMovesLinesRight) {
  const WorldConfig cfg;
  const double mpp = cfg.camera_width / static_cast<double>(cfg.frame_width);
  const auto f0 = render_camera(at(10, 0.0, 0), straight_track(), {}, cfg);
  const auto f1 = render_camera(at(10, 0.3, 0), straight_track(), {}, cfg);
  const auto a = line_centroids(f0, 20), b = line_centroids(f1, 20);
  ASSERT_EQ(a.size(), 4u);
  ASSERT_EQ(b.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(std::lround(b[i] - a[i]), std::lround(0.3 / mpp));
  }
}

TEST(Render, PureFunction) {
  const WorldConfig cfg = WorldConfig::tiny();
  const auto sc = load_scenario(std::string(LANEPILOT_SCENARIO_DIR) + "/training.json");
  const VehicleState s = at(40.0, 3.0, 0.4);
  EXPECT_EQ(render_camera(s, sc.track, {}, cfg), render_camera(s, sc.track, {}, cfg));
}

// ---------------------------------------------------------------------------
// Expert

TEST(Expert, CenteredIsZero) {
  EXPECT_EQ(expert_steering(at(10, 0, 0), straight_track(), 2, WorldConfig{}), 0.0);
}

TEST(Expert, DisplacedLeftSteersRight) {
  EXPECT_LT(expert_steering(at(10, 0.3, 0), straight_track(), 2, WorldConfig{}), 0.0);
  EXPECT_GT(expert_steering(at(10, -0.3, 0), straight_track(), 2, WorldConfig{}), 0.0);
}

TEST(Expert, MatchesPurePursuitClosedForm) {
  const WorldConfig cfg;
  for (double d : {0.3, -0.3, 0.1, 0.45}) {
    EXPECT_NEAR(expert_steering(at(10, d, 0), straight_track(), 2, cfg),
                oracle::pure_pursuit_straight(d, cfg.lookahead, cfg.vehicle.wheelbase), 1e-12);
  }
  // Targeting lane 1 from lane 2 is a displacement of -1 m relative to it.
  EXPECT_NEAR(expert_steering(at(10, 0, 0), straight_track(), 1, cfg),
              std::clamp(oracle::pure_pursuit_straight(-1.0, 4.0, 1.0), -0.5, 0.5), 1e-12);
}

TEST(Expert, OffRoadThrows) {
  EXPECT_THROW(expert_steering(at(10, 2.0, 0), straight_track(), 2, WorldConfig{}), OffTrackError);
  EXPECT_THROW(expert_steering(at(-30, 0, 0), straight_track(), 2, WorldConfig{}), OffTrackError);
}

// ---------------------------------------------------------------------------
// World stepping

TEST(StepWorld, EmptyWorldIsEgoOnly) {
  World w;
  w.track = straight_track();
  w.ego = at(0, 0, 0, 2.0);
  w.command = {0.3, 2.0};
  VehicleState ref = w.ego;
  for (int i = 0; i < 10; ++i) {
    step_world(w, 0.02);
    ref = step_vehicle(ref, 0.3, 0.02);
  }
  EXPECT_EQ(w.ego, ref);
  EXPECT_FALSE(w.collision);
  EXPECT_NEAR(w.time, 0.2, 1e-12);
}

TEST(StepWorld, MovingObstacleAdvances) {
  World w;
  w.track = straight_track();
  w.ego = at(0, 0, 0, 0.0);
  w.obstacles.push_back(make_obstacle(w.track, 1, 100.0, 1.0, 0.3));
  const double x0 = w.obstacles[0].pose.x;
  step_world(w, 0.02);
  EXPECT_NEAR(w.obstacles[0].pose.x - x0, 0.02, 1e-12);
  EXPECT_DOUBLE_EQ(w.obstacles[0].pose.y, 1.0);
}

TEST(StepWorld, CollisionOnFirstOverlap) {
  World w;
  w.track = straight_track();
  w.ego = at(0, 0, 0, 1.0);
  w.command = {0.0, 1.0};
  w.obstacles.push_back(make_obstacle(w.track, 2, 25.01, 0.0, 0.3));  // x = 5.01
  // Independent check: ego x after k steps is 0.02 k; overlap when 5.01 - x < 0.6.
  int expected = -1;
  for (int k = 1; k < 1000; ++k) {
    if (5.01 - 0.02 * k < 0.6) {
      expected = k;
      break;
    }
  }
  int first = -1;
  for (int k = 1; k < 1000 && first < 0; ++k) {
    step_world(w, 0.02);
    if (w.collision) first = k;
  }
  EXPECT_EQ(first, expected);
  EXPECT_EQ(w.colliding, std::vector<std::size_t>{0});
}
