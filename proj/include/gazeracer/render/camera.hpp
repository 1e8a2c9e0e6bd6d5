#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gazeracer/sim/quad.hpp"
#include "gazeracer/sim/track.hpp"

namespace gazeracer {

/// Forward-looking pinhole camera pitched up by `uptilt` about the body y
/// axis. The horizontal field of view spans pixel centers 0 .. width-1.
struct CameraModel {
  int width = 128;
  int height = 96;
  double hfov = 80.0;    // degrees
  double uptilt = 25.0;  // degrees
  double cx = -1.0;      // principal point; negative = image center
  double cy = -1.0;

  void validate() const;
  double focal() const;
  double principal_x() const { return cx >= 0.0 ? cx : 0.5 * (width - 1); }
  double principal_y() const { return cy >= 0.0 ? cy : 0.5 * (height - 1); }
  double vfov() const;  // degrees, derived from hfov and aspect

  // Camera axes in the body frame.
  Eigen::Vector3d forward_body() const;
  Eigen::Vector3d right_body() const;
  Eigen::Vector3d down_body() const;
};

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  bool in_front = false;
  double depth = 0.0;  // along the optical axis
};

Projection project_point(const Eigen::Vector3d& p_world, const QuadState& s,
                         const CameraModel& cam);

/// Row-major RGB, 8 bits per channel.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  std::int64_t id = 0;
  double timestamp = 0.0;

  Frame() = default;
  Frame(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool valid() const { return pixels.size() == static_cast<std::size_t>(width) * height * 3; }
};

using Rgb = std::array<std::uint8_t, 3>;

struct RenderStyle {
  Rgb sky{135, 190, 235};
  Rgb checker_dark{90, 90, 90};
  Rgb checker_light{165, 165, 165};
  double cell = 1.0;  // m
  /// Checkered walls on the collider bounds (same palette as the floor).
  bool arena_walls = true;
};

/// Distinct saturated hue for gate `index` of `count`.
Rgb gate_color(int index, int count);

/// Floor at bounds.min.z with the checker anchored at bounds.min; gates as
/// frame bands (four bars, two triangles each) with a depth buffer.
Frame render_frame(const QuadState& s, const Track& track, const CameraModel& cam,
                   const RenderStyle& style = {});

/// Luma in [0, 255] as floats, row-major.
std::vector<float> to_gray(const Frame& frame);

// Debug dump and packed dataset storage.
std::string frame_to_ppm(const Frame& frame);
Frame frame_from_ppm(const std::string& bytes);

/// Packed frames: magic "GRFP", u32 count, u32 width, u32 height, then raw
/// RGB frames back to back, little-endian header.
std::string pack_frames(const std::vector<Frame>& frames);
std::vector<Frame> unpack_frames(const std::string& bytes);

}  // namespace gazeracer
