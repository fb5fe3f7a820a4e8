#pragma once

#include <cmath>
#include <numbers>

namespace lanepilot::sim {

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

// Heading is counter-clockwise from +x.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

// World point expressed in the frame of `pose` (x forward, y left).
inline Vec2 to_local(const Pose& pose, Vec2 p) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  const double dx = p.x - pose.x, dy = p.y - pose.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Vec2 to_world(const Pose& pose, Vec2 local) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {pose.x + c * local.x - s * local.y, pose.y + s * local.x + c * local.y};
}

}  // namespace lanepilot::sim
