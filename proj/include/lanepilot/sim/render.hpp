#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lanepilot/common/hash.hpp"
#include "lanepilot/nn/tensor.hpp"
#include "lanepilot/sim/track.hpp"
#include "lanepilot/sim/world.hpp"

namespace lanepilot::sim {

inline constexpr std::uint8_t kLinePixel = 255;
inline constexpr std::uint8_t kObstaclePixel = 128;
inline constexpr std::uint8_t kBackgroundPixel = 0;

// Grayscale frame, row-major, row 0 = farthest ahead.
struct CameraFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  // [1,H,W] tensor with pixels scaled to [0, 1].
  nn::Tensor to_tensor() const {
    nn::Tensor t({1, height, width});
    for (std::size_t i = 0; i < pixels.size(); ++i) t[i] = static_cast<float>(pixels[i]) / 255.0f;
    return t;
  }

  std::uint64_t hash() const { return fnv1a64(std::span<const std::uint8_t>(pixels)); }

  friend bool operator==(const CameraFrame&, const CameraFrame&) = default;
};

// Vehicle-frame position of a pixel center: x forward, y left. The lateral
// coordinate is antisymmetric in the column index so mirrored worlds render
// mirrored frames bit-for-bit.
inline Vec2 pixel_center_local(std::size_t row, std::size_t col, const WorldConfig& cfg) {
  const double h = static_cast<double>(cfg.frame_height), w = static_cast<double>(cfg.frame_width);
  const double forward = (h - static_cast<double>(row) - 0.5) * (cfg.camera_ahead / h);
  const double lateral = ((w - 1.0) / 2.0 - static_cast<double>(col)) * (cfg.camera_width / w);
  return {forward, lateral};
}

// Bird's-eye rasterization of the window ahead of the vehicle. Each pixel is
// decided by its center: inside an obstacle disk -> 128, within half the
// stroke width of a lane boundary -> 255, otherwise 0.
inline CameraFrame render_camera(const VehicleState& state, const Track& track,
                                 std::span<const Obstacle> obstacles, const WorldConfig& cfg) {
  CameraFrame f{cfg.frame_height, cfg.frame_width,
                std::vector<std::uint8_t>(cfg.frame_height * cfg.frame_width, kBackgroundPixel)};
  const double view_radius =
      std::hypot(cfg.camera_ahead, cfg.camera_width / 2.0) + track.road_half_width() + 1.0;
  const auto candidates = track.segments_near(state.pose.position(), view_radius);
  const auto boundaries = track.boundary_offsets();
  const double half_stroke = cfg.stroke_width / 2.0;

  std::vector<const Obstacle*> visible;
  for (const auto& o : obstacles) {
    if (norm(o.pose.position() - state.pose.position()) <= view_radius + o.radius) visible.push_back(&o);
  }

  for (std::size_t r = 0; r < cfg.frame_height; ++r) {
    for (std::size_t c = 0; c < cfg.frame_width; ++c) {
      const Vec2 p = to_world(state.pose, pixel_center_local(r, c, cfg));
      std::uint8_t value = kBackgroundPixel;
      bool in_obstacle = false;
      for (const Obstacle* o : visible) {
        if (norm(p - o->pose.position()) <= o->radius) {
          in_obstacle = true;
          break;
        }
      }
      if (in_obstacle) {
        value = kObstaclePixel;
      } else if (!candidates.empty()) {
        const auto proj = track.project(p, candidates);
        if (!proj.beyond_start && !proj.beyond_end) {
          for (double b : boundaries) {
            if (std::abs(proj.lateral - b) <= half_stroke) {
              value = kLinePixel;
              break;
            }
          }
        }
      }
      f.pixels[r * cfg.frame_width + c] = value;
    }
  }
  return f;
}

}  // namespace lanepilot::sim
