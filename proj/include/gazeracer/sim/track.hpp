#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gazeracer/sim/quad.hpp"

namespace gazeracer {

/// Rectangular gate. The aperture is inner_w x inner_h; the frame band
/// extends frame_thickness beyond each aperture edge.
struct Gate {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  double inner_w = 1.5;
  double inner_h = 1.5;
  double frame_thickness = 0.2;
  int index = 0;

  Eigen::Vector3d right() const { return up.cross(normal); }
  void validate() const;
};

struct Bounds {
  Eigen::Vector3d min{-15.0, -7.5, 0.0};
  Eigen::Vector3d max{15.0, 7.5, 8.0};

  bool contains(const Eigen::Vector3d& p) const;
  double floor() const { return min.z(); }
};

struct Track {
  std::string name;
  std::vector<Gate> gates;
  QuadState start_pose;
  Bounds bounds;

  void validate() const;
};

enum class GateCrossing { None, Pass, FrameHit };

/// Classifies the segment p_prev -> p_next against one gate.
GateCrossing check_gate_pass(const QuadState& prev, const QuadState& next, const Gate& gate);
GateCrossing check_gate_pass(const Eigen::Vector3d& p_prev, const Eigen::Vector3d& p_next,
                             const Gate& gate);

enum class RunStatus { Running, Completed, Crashed };
enum class TerminationCause {
  None,
  Completed,
  OutOfBounds,
  Ground,
  GateFrame,
  Timeout,
  ControllerFailure,
};

std::string_view to_string(TerminationCause cause);

struct Termination {
  RunStatus status = RunStatus::Running;
  TerminationCause cause = TerminationCause::None;
};

/// next_gate is the number of gates already passed in order.
Termination check_termination(const QuadState& s, const Track& track, int next_gate,
                              bool frame_hit_this_tick = false);

/// Bundled layouts: "figure8" (10 gates) and "oval" (6 gates).
Track generate_track(std::string_view name);

/// Catmull-Rom point on the closed loop through gate centers; u in gate
/// segments (segment i runs from gate i to gate i+1).
Eigen::Vector3d loop_point(const std::vector<Eigen::Vector3d>& pts, double u);

// JSON track files.
std::string track_to_json(const Track& track);
Track track_from_json(std::string_view text);
Track load_track(const std::string& path);
void save_track(const Track& track, const std::string& path);

}  // namespace gazeracer
