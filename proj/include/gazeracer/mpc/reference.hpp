#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gazeracer/sim/track.hpp"

namespace gazeracer {

struct RefSample {
  double t = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d w = Eigen::Vector3d::Zero();  // body frame
};

/// Desired states at a uniform 50 Hz. A closed reference loops: querying past
/// the end wraps around with period `period`; an open one holds its last sample.
class ReferenceTrajectory {
 public:
  static constexpr double kDt = 0.02;

  ReferenceTrajectory() = default;
  ReferenceTrajectory(std::vector<RefSample> samples, bool closed, double period);

  const std::vector<RefSample>& samples() const { return samples_; }
  bool closed() const { return closed_; }
  /// One lap for closed references, the sampled span for open ones.
  double duration() const { return period_; }
  bool empty() const { return samples_.empty(); }

  /// Interpolated sample at time t (linear in p, v, w; slerp in q).
  RefSample at(double t) const;

  void validate() const;

 private:
  std::vector<RefSample> samples_;
  bool closed_ = false;
  double period_ = 0.0;
};

struct ReferenceOptions {
  double speed = 5.0;
  double g = 9.81;
  /// Per-gate passage offsets (right, up) in the gate plane; empty = centers.
  std::vector<Eigen::Vector2d> gate_offsets;
};

/// Closed Catmull-Rom loop through the (offset) gate centers, arc-length
/// parameterized at constant speed. Starts midway between the last and the
/// first gate. Throws std::invalid_argument when speed is outside (0.5, 10]
/// or the loop clips a gate frame.
ReferenceTrajectory generate_reference(const Track& track, const ReferenceOptions& opts);

/// Jittered reference family standing in for human trajectories: offsets
/// uniform in [-offset, offset] per gate axis, speed uniform in
/// [speed_min, speed_max].
struct ReferenceSetOptions {
  int count = 18;
  double offset = 0.3;
  double speed_min = 4.0;
  double speed_max = 6.0;
  double g = 9.81;
};
std::vector<ReferenceTrajectory> generate_reference_set(const Track& track,
                                                        const ReferenceSetOptions& opts,
                                                        std::uint64_t seed);

/// Reference state as the initial QuadState of a rollout.
QuadState initial_state(const ReferenceTrajectory& ref);

// CSV: ts,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz
std::string reference_to_csv(const ReferenceTrajectory& ref);
/// Externally supplied references load as open trajectories unless the first
/// and last positions coincide within 0.5 m.
ReferenceTrajectory reference_from_csv(const std::string& text);
ReferenceTrajectory load_reference(const std::string& path);
void save_reference(const ReferenceTrajectory& ref, const std::string& path);

}  // namespace gazeracer
