#include "gazeracer/sim/quad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gazeracer {

namespace {

struct Deriv {
  Eigen::Vector3d p_dot;
  Eigen::Vector3d v_dot;
  Eigen::Vector4d q_dot;  // (w, x, y, z)
  Eigen::Vector3d w_dot;
};

struct Raw {
  Eigen::Vector3d p;
  Eigen::Vector3d v;
  Eigen::Vector4d q;  // (w, x, y, z), not necessarily unit mid-step
  Eigen::Vector3d w;
};

Eigen::Vector4d quat_mul(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

// Body z axis in world frame, R(q) * e_z, for a possibly non-unit q.
Eigen::Vector3d body_z(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double n2 = w * w + x * x + y * y + z * z;
  return Eigen::Vector3d(2.0 * (x * z + w * y), 2.0 * (y * z - w * x),
                         w * w - x * x - y * y + z * z) /
         n2;
}

Deriv derivative(const Raw& s, const Command& u, const QuadParams& params) {
  Deriv d;
  d.p_dot = s.v;
  d.v_dot = u.c * body_z(s.q) - Eigen::Vector3d(0.0, 0.0, params.g);
  const Eigen::Vector4d omega(0.0, s.w.x(), s.w.y(), s.w.z());
  d.q_dot = 0.5 * quat_mul(s.q, omega);
  if (params.rate_lag_tau > 0.0) {
    d.w_dot = (u.rates - s.w) / params.rate_lag_tau;
  } else {
    d.w_dot.setZero();
  }
  return d;
}

Raw advance(const Raw& s, const Deriv& d, double h) {
  return {s.p + h * d.p_dot, s.v + h * d.v_dot, s.q + h * d.q_dot, s.w + h * d.w_dot};
}

}  // namespace

bool QuadState::finite() const {
  return std::isfinite(t) && p.allFinite() && v.allFinite() && q.coeffs().allFinite() &&
         w.allFinite();
}

void QuadParams::validate() const {
  if (!(mass > 0 && arm_length > 0 && c_max > 0 && w_max > 0 && g > 0 && rate_lag_tau >= 0)) {
    throw std::invalid_argument("QuadParams: mass, arm_length, c_max, w_max, g must be positive "
                                "and rate_lag_tau non-negative");
  }
}

ClampedCommand clamp_command(const Command& u, const QuadParams& params) {
  ClampedCommand out;
  if (!std::isfinite(u.c) || !u.rates.allFinite()) {
    out.command = params.hover();
    out.non_finite = true;
    return out;
  }
  out.command.c = std::clamp(u.c, 0.0, params.thrust_limit());
  for (int i = 0; i < 3; ++i) {
    out.command.rates[i] = std::clamp(u.rates[i], -params.w_max, params.w_max);
  }
  return out;
}

QuadState step_dynamics(const QuadState& s, const Command& u, const QuadParams& params, double dt) {
  if (!s.finite() || !std::isfinite(u.c) || !u.rates.allFinite()) {
    std::ostringstream msg;
    msg << "step_dynamics: non-finite input at t=" << s.t << " p=(" << s.p.transpose()
        << ") v=(" << s.v.transpose() << ") q=(" << s.q.coeffs().transpose() << ") w=("
        << s.w.transpose() << ") u=(" << u.c << ", " << u.rates.transpose() << ")";
    throw std::invalid_argument(msg.str());
  }
  if (!(dt > 0.0 && dt <= 0.05)) {
    throw std::invalid_argument("step_dynamics: dt must be in (0, 0.05], got " +
                                std::to_string(dt));
  }

  Raw x{s.p, s.v, Eigen::Vector4d(s.q.w(), s.q.x(), s.q.y(), s.q.z()), s.w};
  if (params.rate_lag_tau <= 0.0) x.w = u.rates;

  const Deriv k1 = derivative(x, u, params);
  const Deriv k2 = derivative(advance(x, k1, 0.5 * dt), u, params);
  const Deriv k3 = derivative(advance(x, k2, 0.5 * dt), u, params);
  const Deriv k4 = derivative(advance(x, k3, dt), u, params);

  const double h6 = dt / 6.0;
  QuadState out;
  out.t = s.t + dt;
  out.p = x.p + h6 * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot);
  out.v = x.v + h6 * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
  Eigen::Vector4d q = x.q + h6 * (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot);
  q.normalize();
  out.q = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  out.w = x.w + h6 * (k1.w_dot + 2.0 * k2.w_dot + 2.0 * k3.w_dot + k4.w_dot);
  return out;
}

}  // namespace gazeracer
