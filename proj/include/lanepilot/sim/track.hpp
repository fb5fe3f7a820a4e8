#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lanepilot/common/error.hpp"
#include "lanepilot/sim/geometry.hpp"

namespace lanepilot::sim {

// Nearest point on the centerline.
struct TrackProjection {
  double s = 0.0;         // arc length of the foot point
  double lateral = 0.0;   // signed distance, positive = left of travel direction
  double heading = 0.0;   // direction of the nearest segment
  std::size_t segment = 0;
  bool beyond_start = false;  // open tracks only: point lies before the first vertex
  bool beyond_end = false;    // open tracks only: point lies past the last vertex
};

// Piecewise-linear centerline of a three-lane road. The centerline runs down
// the middle lane; lane 1 is the leftmost lane, lane 3 the rightmost.
class Track {
 public:
  static constexpr int kLaneCount = 3;

  Track() = default;

  Track(std::vector<Vec2> points, bool closed, double lane_width = 1.0,
        int lane_count = kLaneCount, std::optional<double> declared_length = std::nullopt)
      : points_(std::move(points)), closed_(closed), lane_width_(lane_width) {
    if (lane_count != kLaneCount) throw ConfigError("track lane_count must be 3");
    if (!(lane_width > 0.0)) throw ConfigError("track lane_width must be positive");
    if (points_.size() < 2) throw ConfigError("track needs at least two points");
    const std::size_t n_seg = closed_ ? points_.size() : points_.size() - 1;
    cumulative_.assign(n_seg + 1, 0.0);
    for (std::size_t i = 0; i < n_seg; ++i) {
      const double len = norm(end_of(i) - points_[i]);
      if (!(len > 1e-9)) throw ConfigError("track segment " + std::to_string(i) + " is degenerate");
      cumulative_[i + 1] = cumulative_[i] + len;
    }
    if (declared_length && std::abs(*declared_length - length()) > 1e-6) {
      throw ConfigError("track polyline length " + std::to_string(length()) +
                        " does not match declared length " + std::to_string(*declared_length));
    }
  }

  double length() const { return cumulative_.back(); }
  bool closed() const { return closed_; }
  double lane_width() const { return lane_width_; }
  int lane_count() const { return kLaneCount; }
  const std::vector<Vec2>& points() const { return points_; }
  std::size_t segment_count() const { return cumulative_.size() - 1; }

  // Lateral offset of a lane center from the centerline.
  double lane_offset(int lane) const {
    if (lane < 1 || lane > kLaneCount) throw ConfigError("lane index must be 1, 2 or 3");
    return static_cast<double>(2 - lane) * lane_width_;
  }

  // Lane whose center is closest to a lateral offset, clamped to the road.
  int nearest_lane(double lateral) const {
    const int lane = 2 - static_cast<int>(std::lround(lateral / lane_width_));
    return std::clamp(lane, 1, kLaneCount);
  }

  // Lateral offsets of the four lane boundary lines.
  std::vector<double> boundary_offsets() const {
    return {1.5 * lane_width_, 0.5 * lane_width_, -0.5 * lane_width_, -1.5 * lane_width_};
  }

  double road_half_width() const { return 1.5 * lane_width_; }

  TrackProjection project(Vec2 p) const {
    TrackProjection best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < segment_count(); ++i) consider(p, i, best, best_d2);
    return best;
  }

  // Projection restricted to candidate segments (see segments_near).
  TrackProjection project(Vec2 p, std::span<const std::size_t> candidates) const {
    if (candidates.empty()) return project(p);
    TrackProjection best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i : candidates) consider(p, i, best, best_d2);
    return best;
  }

  // Segments with any point within `radius` of `c`, in index order.
  std::vector<std::size_t> segments_near(Vec2 c, double radius) const {
    std::vector<std::size_t> out;
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < segment_count(); ++i) {
      const Vec2 a = points_[i], d = end_of(i) - a;
      const double t = std::clamp(dot(c - a, d) / dot(d, d), 0.0, 1.0);
      const Vec2 foot = a + t * d;
      if (dot(c - foot, c - foot) <= r2) out.push_back(i);
    }
    return out;
  }

  double wrap_s(double s) const {
    if (closed_) {
      s = std::fmod(s, length());
      if (s < 0.0) s += length();
      return s;
    }
    return std::clamp(s, 0.0, length());
  }

  // Pose on the centerline at arc length s, displaced laterally (+left).
  Pose point_at(double s, double lateral = 0.0) const {
    s = wrap_s(s);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
    std::size_t seg = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
    seg = std::min(seg, segment_count() - 1);
    const Vec2 a = points_[seg], d = end_of(seg) - a;
    const double len = cumulative_[seg + 1] - cumulative_[seg];
    const double t = (s - cumulative_[seg]) / len;
    const double heading = std::atan2(d.y, d.x);
    const Vec2 foot = a + t * d;
    return {foot.x - lateral * std::sin(heading), foot.y + lateral * std::cos(heading), heading};
  }

  // Signed lateral distance from the center of `lane`, positive = left.
  double cross_track_error(const Pose& pose, int lane) const {
    const auto proj = checked_projection(pose.position());
    return proj.lateral - lane_offset(lane);
  }

  double heading_error(const Pose& pose) const {
    const auto proj = checked_projection(pose.position());
    return wrap_angle(pose.heading - proj.heading);
  }

  TrackProjection checked_projection(Vec2 p) const {
    const auto proj = project(p);
    if (proj.beyond_start || proj.beyond_end) {
      throw OffTrackError("pose lies beyond the ends of the track");
    }
    return proj;
  }

 private:
  Vec2 end_of(std::size_t seg) const { return points_[(seg + 1) % points_.size()]; }

  void consider(Vec2 p, std::size_t i, TrackProjection& best, double& best_d2) const {
    const Vec2 a = points_[i], d = end_of(i) - a;
    const double raw_t = dot(p - a, d) / dot(d, d);
    const double t = std::clamp(raw_t, 0.0, 1.0);
    const Vec2 foot = a + t * d;
    const Vec2 off = p - foot;
    const double d2 = dot(off, off);
    if (!(d2 < best_d2)) return;
    best_d2 = d2;
    const double len = cumulative_[i + 1] - cumulative_[i];
    best.segment = i;
    best.s = cumulative_[i] + t * len;
    best.heading = std::atan2(d.y, d.x);
    const double dist = std::sqrt(d2);
    best.lateral = cross(d, off) < 0.0 ? -dist : dist;
    best.beyond_start = !closed_ && i == 0 && raw_t < 0.0;
    best.beyond_end = !closed_ && i + 1 == segment_count() && raw_t > 1.0;
  }

  std::vector<Vec2> points_;
  std::vector<double> cumulative_{0.0};
  bool closed_ = false;
  double lane_width_ = 1.0;
};

// A straight run or a circular arc (positive angle turns left).
struct TrackPiece {
  enum class Kind { Straight, Arc } kind = Kind::Straight;
  double length = 0.0;  // straight
  double radius = 0.0;  // arc
  double angle = 0.0;   // arc, radians
};

// Polyline through a sequence of pieces. Arcs are split into equal chords no
// longer than `step` meters; straights become a single segment.
inline std::vector<Vec2> build_polyline(const Pose& start, std::span<const TrackPiece> pieces,
                                        double step) {
  if (!(step > 0.0)) throw ConfigError("track step must be positive");
  std::vector<Vec2> pts{start.position()};
  Vec2 p = start.position();
  double h = start.heading;
  for (const auto& piece : pieces) {
    if (piece.kind == TrackPiece::Kind::Straight) {
      if (!(piece.length > 0.0)) throw ConfigError("straight length must be positive");
      p = p + piece.length * Vec2{std::cos(h), std::sin(h)};
      pts.push_back(p);
    } else {
      if (!(piece.radius > 0.0) || piece.angle == 0.0) throw ConfigError("invalid arc piece");
      const double arc_len = piece.radius * std::abs(piece.angle);
      const auto n = static_cast<std::size_t>(std::ceil(arc_len / step));
      const double dtheta = piece.angle / static_cast<double>(n);
      const double chord = 2.0 * piece.radius * std::sin(std::abs(dtheta) / 2.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double mid = h + dtheta / 2.0;
        p = p + chord * Vec2{std::cos(mid), std::sin(mid)};
        h += dtheta;
        pts.push_back(p);
      }
    }
  }
  return pts;
}

// Closed oval: two straights joined by semicircles of `radius`, with the
// straight length chosen so the polyline is exactly `length` meters.
inline Track make_oval_track(double length, double radius, double lane_width = 1.0,
                             double step = 1.0) {
  const auto n = static_cast<std::size_t>(std::ceil(kPi * radius / step));
  const double chord = 2.0 * radius * std::sin(kPi / static_cast<double>(n) / 2.0);
  const double straight = (length - 2.0 * static_cast<double>(n) * chord) / 2.0;
  if (!(straight > 0.0)) throw ConfigError("oval radius too large for requested length");
  const TrackPiece pieces[] = {
      {TrackPiece::Kind::Straight, straight, 0, 0},
      {TrackPiece::Kind::Arc, 0, radius, kPi},
      {TrackPiece::Kind::Straight, straight, 0, 0},
      {TrackPiece::Kind::Arc, 0, radius, kPi},
  };
  auto pts = build_polyline(Pose{0.0, -radius, 0.0}, pieces, step);
  pts.pop_back();  // coincides with the start
  return Track(std::move(pts), true, lane_width, Track::kLaneCount);
}

// Track JSON: either explicit {"points": [[x,y],...]}, a piece list
// {"pieces": [{"straight": L} | {"arc": {"radius": R, "angle_deg": A}}]},
// or {"oval": {"length": L, "radius": R}}. Common keys: closed, lane_width,
// lane_count, length (declared, checked), start [x,y,heading_deg], step.
inline Track track_from_json(const nlohmann::json& j) {
  try {
    const double lane_width = j.value("lane_width", 1.0);
    const int lane_count = j.value("lane_count", Track::kLaneCount);
    if (lane_count != Track::kLaneCount) throw ConfigError("track lane_count must be 3");
    std::optional<double> declared;
    if (j.contains("length")) declared = j.at("length").get<double>();
    if (j.contains("oval")) {
      const auto& o = j.at("oval");
      Track t = make_oval_track(o.at("length").get<double>(), o.at("radius").get<double>(),
                                lane_width, j.value("step", 1.0));
      if (declared && std::abs(*declared - t.length()) > 1e-6) {
        throw ConfigError("oval length does not match declared length");
      }
      return t;
    }
    const bool closed = j.value("closed", false);
    std::vector<Vec2> pts;
    if (j.contains("points")) {
      for (const auto& p : j.at("points")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    } else if (j.contains("pieces")) {
      Pose start;
      if (j.contains("start")) {
        const auto& s = j.at("start");
        start = {s.at(0).get<double>(), s.at(1).get<double>(), deg_to_rad(s.at(2).get<double>())};
      }
      std::vector<TrackPiece> pieces;
      for (const auto& p : j.at("pieces")) {
        if (p.contains("straight")) {
          pieces.push_back({TrackPiece::Kind::Straight, p.at("straight").get<double>(), 0, 0});
        } else {
          const auto& a = p.at("arc");
          pieces.push_back({TrackPiece::Kind::Arc, 0, a.at("radius").get<double>(),
                            deg_to_rad(a.at("angle_deg").get<double>())});
        }
      }
      pts = build_polyline(start, pieces, j.value("step", 1.0));
      if (closed && pts.size() > 2 && norm(pts.back() - pts.front()) < 1e-6) pts.pop_back();
    } else {
      throw ConfigError("track JSON needs points, pieces or oval");
    }
    return Track(std::move(pts), closed, lane_width, lane_count, declared);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed track JSON: ") + e.what());
  }
}

inline nlohmann::json track_to_json(const Track& t) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : t.points()) pts.push_back({p.x, p.y});
  return {{"points", pts},
          {"closed", t.closed()},
          {"lane_width", t.lane_width()},
          {"lane_count", t.lane_count()}};
}

}  // namespace lanepilot::sim
