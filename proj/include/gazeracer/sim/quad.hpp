#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gazeracer {

/// Full kinematic state of the vehicle. Orientation is body-to-world; body
/// rates are expressed in the body frame.
struct QuadState {
  double t = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d w = Eigen::Vector3d::Zero();

  bool finite() const;
};

/// Mass-normalized collective thrust (m/s^2) and body-rate setpoints (rad/s).
struct Command {
  double c = 0.0;
  Eigen::Vector3d rates = Eigen::Vector3d::Zero();

  Eigen::Vector4d as_vector() const { return {c, rates.x(), rates.y(), rates.z()}; }
  static Command from_vector(const Eigen::Vector4d& u) { return {u[0], u.tail<3>()}; }
};

struct QuadParams {
  double mass = 1.0;
  double arm_length = 0.17;
  double c_max = 21.7;  // collective thrust limit, N
  double w_max = 6.0;   // body-rate limit, rad/s
  double g = 9.81;
  double rate_lag_tau = 0.0;  // 0 = rates tracked instantaneously

  void validate() const;
  double thrust_limit() const { return c_max / mass; }
  Command hover() const { return {g, Eigen::Vector3d::Zero()}; }
};

struct ClampedCommand {
  Command command;
  bool non_finite = false;  // input had NaN/Inf and was replaced by hover
};

ClampedCommand clamp_command(const Command& u, const QuadParams& params);

/// One RK4 step of the point-mass-with-attitude model. `u` must already be
/// clamped. Throws std::invalid_argument on non-finite input or bad dt.
QuadState step_dynamics(const QuadState& s, const Command& u, const QuadParams& params, double dt);

}  // namespace gazeracer
