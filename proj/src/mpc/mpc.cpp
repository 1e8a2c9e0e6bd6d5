#include "gazeracer/mpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace gazeracer {

namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat94 = Eigen::Matrix<double, 9, 4>;
using Mat49 = Eigen::Matrix<double, 4, 9>;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

Eigen::Vector3d quat_log(const Eigen::Quaterniond& q) {
  const Eigen::Vector3d vec = q.vec();
  const double n = vec.norm();
  const double sign = q.w() < 0.0 ? -1.0 : 1.0;
  if (n < 1e-12) return 2.0 * sign * vec;
  const double angle = 2.0 * std::atan2(n, std::abs(q.w()));
  return (sign * angle / n) * vec;
}

Eigen::Quaterniond quat_exp(const Eigen::Vector3d& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) return Eigen::Quaterniond(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z()).normalized();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, theta / angle));
}

QuadState retract(const QuadState& x, const Vec9& d) {
  QuadState out = x;
  out.p += d.segment<3>(0);
  out.v += d.segment<3>(3);
  out.q = (x.q * quat_exp(d.segment<3>(6))).normalized();
  return out;
}

Vec9 local(const QuadState& x1, const QuadState& x0) {
  Vec9 d;
  d.segment<3>(0) = x1.p - x0.p;
  d.segment<3>(3) = x1.v - x0.v;
  d.segment<3>(6) = quat_log(x0.q.conjugate() * x1.q);
  return d;
}

struct Model {
  const QuadParams& params;
  double dt;

  QuadState step(const QuadState& x, const Command& u) const {
    QuadState s = x;
    s.w = u.rates;
    QuadState out = step_dynamics(s, u, params, dt);
    out.w.setZero();
    return out;
  }
};

Vec9 state_residual(const QuadState& x, const RefSample& r, const MpcConfig& cfg) {
  Vec9 res;
  res.segment<3>(0) = std::sqrt(cfg.w_p) * (x.p - r.p);
  res.segment<3>(3) = std::sqrt(cfg.w_v) * (x.v - r.v);
  res.segment<3>(6) = std::sqrt(cfg.w_q) * quat_log(r.q.conjugate() * x.q);
  return res;
}

Vec4 control_residual(const Command& u, const MpcConfig& cfg, const QuadParams& params) {
  return std::sqrt(cfg.w_u) * (u.as_vector() - params.hover().as_vector());
}

Command clamp(const Command& u, const QuadParams& params) {
  return clamp_command(u, params).command;
}

struct Trajectory {
  std::vector<QuadState> x;
  std::vector<Command> u;
  double cost = 0.0;
};

double trajectory_cost(const Trajectory& tr, const std::vector<RefSample>& window,
                       const MpcConfig& cfg, const QuadParams& params) {
  double cost = 0.0;
  for (std::size_t k = 0; k < tr.u.size(); ++k) {
    cost += control_residual(tr.u[k], cfg, params).squaredNorm();
    cost += state_residual(tr.x[k + 1], window[k + 1], cfg).squaredNorm();
  }
  return cost;
}

Trajectory simulate(const QuadState& x0, const std::vector<Command>& u, const Model& model,
                    const std::vector<RefSample>& window, const MpcConfig& cfg) {
  Trajectory tr;
  tr.x.reserve(u.size() + 1);
  tr.x.push_back(x0);
  tr.u = u;
  for (std::size_t k = 0; k < u.size(); ++k) {
    tr.u[k] = clamp(u[k], model.params);
    tr.x.push_back(model.step(tr.x[k], tr.u[k]));
  }
  tr.cost = trajectory_cost(tr, window, cfg, model.params);
  return tr;
}

void linearize(const QuadState& x, const Command& u, const Model& model, Mat9& a, Mat94& b) {
  constexpr double eps = 1e-6;
  const QuadState fx = model.step(x, u);
  (void)fx;
  for (int i = 0; i < 9; ++i) {
    Vec9 d = Vec9::Zero();
    d[i] = eps;
    const QuadState xp = model.step(retract(x, d), u);
    const QuadState xm = model.step(retract(x, -d), u);
    a.col(i) = (local(xp, fx) - local(xm, fx)) / (2.0 * eps);
  }
  for (int i = 0; i < 4; ++i) {
    Vec4 up = u.as_vector(), um = u.as_vector();
    up[i] += eps;
    um[i] -= eps;
    const QuadState xp = model.step(x, Command::from_vector(up));
    const QuadState xm = model.step(x, Command::from_vector(um));
    b.col(i) = (local(xp, fx) - local(xm, fx)) / (2.0 * eps);
  }
}

// Gauss-Newton gradient and Hessian of the state cost in the tangent space at x.
void state_cost_derivatives(const QuadState& x, const RefSample& r, const MpcConfig& cfg, Vec9& lx,
                            Mat9& lxx) {
  const Vec9 res = state_residual(x, r, cfg);
  Mat9 jac = Mat9::Zero();
  jac.block<3, 3>(0, 0) = std::sqrt(cfg.w_p) * Eigen::Matrix3d::Identity();
  jac.block<3, 3>(3, 3) = std::sqrt(cfg.w_v) * Eigen::Matrix3d::Identity();
  constexpr double eps = 1e-6;
  for (int i = 0; i < 3; ++i) {
    Vec9 d = Vec9::Zero();
    d[6 + i] = eps;
    const Vec9 rp = state_residual(retract(x, d), r, cfg);
    const Vec9 rm = state_residual(retract(x, -d), r, cfg);
    jac.block<3, 1>(6, 6 + i) = (rp.segment<3>(6) - rm.segment<3>(6)) / (2.0 * eps);
  }
  lx = 2.0 * jac.transpose() * res;
  lxx = 2.0 * jac.transpose() * jac;
}

std::vector<Command> shifted_warm_start(const MpcSolution& prev, double t0, const MpcConfig& cfg) {
  std::vector<Command> out(cfg.nodes);
  const int m = static_cast<int>(prev.controls.size());
  const double dt = cfg.node_dt();
  for (int k = 0; k < cfg.nodes; ++k) {
    const double pos = (t0 - prev.t0) / dt + k;
    if (pos >= m - 1) {
      out[k] = prev.controls.back();
      continue;
    }
    const int i = std::max(0, static_cast<int>(std::floor(pos)));
    const double f = std::clamp(pos - i, 0.0, 1.0);
    out[k] = Command::from_vector((1.0 - f) * prev.controls[i].as_vector() +
                                  f * prev.controls[i + 1].as_vector());
  }
  return out;
}

}  // namespace

void MpcConfig::validate() const {
  if (!(horizon > 0.0) || nodes < 2 || w_p < 0 || w_v < 0 || w_q < 0 || w_u < 0 ||
      max_iterations < 1 || !(tol > 0.0)) {
    throw std::invalid_argument("mpc config: horizon > 0, nodes >= 2, weights >= 0, "
                                "max_iterations >= 1, tol > 0 required");
  }
  if (node_dt() > 0.05) throw std::invalid_argument("mpc config: horizon / nodes must be <= 0.05 s");
}

std::vector<RefSample> reference_window(const ReferenceTrajectory& ref, double t0,
                                        const MpcConfig& cfg) {
  std::vector<RefSample> w;
  w.reserve(cfg.nodes + 1);
  for (int k = 0; k <= cfg.nodes; ++k) w.push_back(ref.at(t0 + k * cfg.node_dt()));
  return w;
}

double mpc_cost(const QuadState& s, const std::vector<Command>& controls,
                const std::vector<RefSample>& window, const MpcConfig& cfg,
                const QuadParams& params) {
  const Model model{params, cfg.node_dt()};
  return simulate(s, controls, model, window, cfg).cost;
}

MpcSolution solve_mpc(const QuadState& s, const std::vector<RefSample>& window,
                      const MpcConfig& cfg, const QuadParams& params,
                      const MpcSolution* warm_start) {
  cfg.validate();
  if (static_cast<int>(window.size()) < cfg.nodes + 1) {
    throw std::invalid_argument("solve_mpc: reference window shorter than the horizon");
  }
  const int n = cfg.nodes;
  QuadParams model_params = params;
  model_params.rate_lag_tau = 0.0;
  const Model model{model_params, cfg.node_dt()};

  MpcSolution sol;
  sol.t0 = s.t;
  auto hover_fallback = [&] {
    sol.fallback = true;
    sol.controls.assign(n, params.hover());
    sol.states.assign(n + 1, s);
    return sol;
  };
  if (!s.finite()) return hover_fallback();

  QuadState x0 = s;
  x0.w.setZero();
  std::vector<Command> guess = (warm_start && !warm_start->fallback && !warm_start->controls.empty())
                                   ? shifted_warm_start(*warm_start, s.t, cfg)
                                   : std::vector<Command>(n, params.hover());
  Trajectory cur = simulate(x0, guess, model, window, cfg);
  if (!std::isfinite(cur.cost)) return hover_fallback();
  sol.cost_trace.push_back(cur.cost);

  std::vector<Mat9> as(n);
  std::vector<Mat94> bs(n);
  std::vector<Mat49> gains(n);
  std::vector<Vec4> ff(n);
  double mu = 1e-6;
  const Vec4 u_hover = params.hover().as_vector();

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    for (int k = 0; k < n; ++k) linearize(cur.x[k], cur.u[k], model, as[k], bs[k]);

    bool accepted = false;
    while (!accepted && mu < 1e6) {
      // Backward pass.
      Vec9 vx;
      Mat9 vxx;
      state_cost_derivatives(cur.x[n], window[n], cfg, vx, vxx);
      bool ok = true;
      for (int k = n - 1; k >= 0; --k) {
        const Vec4 lu = 2.0 * cfg.w_u * (cur.u[k].as_vector() - u_hover);
        const Mat4 luu = 2.0 * cfg.w_u * Mat4::Identity();
        const Vec9 qx = as[k].transpose() * vx;
        const Vec4 qu = lu + bs[k].transpose() * vx;
        const Mat9 qxx = as[k].transpose() * vxx * as[k];
        Mat4 quu = luu + bs[k].transpose() * vxx * bs[k];
        const Mat49 qux = bs[k].transpose() * vxx * as[k];
        Mat4 quu_reg = quu + mu * Mat4::Identity();
        Eigen::LLT<Mat4> llt(quu_reg);
        if (llt.info() != Eigen::Success) {
          ok = false;
          break;
        }
        ff[k] = -llt.solve(qu);
        gains[k] = -llt.solve(qux);
        vx = qx + gains[k].transpose() * quu * ff[k] + gains[k].transpose() * qu +
             qux.transpose() * ff[k];
        vxx = qxx + gains[k].transpose() * quu * gains[k] + gains[k].transpose() * qux +
              qux.transpose() * gains[k];
        vxx = 0.5 * (vxx + vxx.transpose()).eval();
        if (k > 0) {
          Vec9 lx;
          Mat9 lxx;
          state_cost_derivatives(cur.x[k], window[k], cfg, lx, lxx);
          vx += lx;
          vxx += lxx;
        }
      }
      if (!ok) {
        mu *= 10.0;
        continue;
      }

      // Forward pass with backtracking.
      for (const double alpha : {1.0, 0.5, 0.25}) {
        Trajectory cand;
        cand.x.reserve(n + 1);
        cand.x.push_back(x0);
        cand.u.resize(n);
        for (int k = 0; k < n; ++k) {
          const Vec9 dx = local(cand.x[k], cur.x[k]);
          const Vec4 u = cur.u[k].as_vector() + alpha * ff[k] + gains[k] * dx;
          cand.u[k] = clamp(Command::from_vector(u), model_params);
          cand.x.push_back(model.step(cand.x[k], cand.u[k]));
        }
        cand.cost = trajectory_cost(cand, window, cfg, model_params);
        if (std::isfinite(cand.cost) && cand.cost <= cur.cost) {
          const double prev_cost = cur.cost;
          cur = std::move(cand);
          accepted = true;
          sol.cost_trace.push_back(cur.cost);
          sol.iterations = iter + 1;
          mu = std::max(1e-6, mu * 0.1);
          if (prev_cost - cur.cost <= cfg.tol * std::max(prev_cost, 1e-12)) sol.converged = true;
          break;
        }
      }
      if (!accepted) mu *= 10.0;
    }
    if (!accepted) {
      // No descent direction left: the current iterate is a local optimum.
      sol.converged = true;
      break;
    }
    if (sol.converged) break;
  }
  if (!std::isfinite(cur.cost)) return hover_fallback();
  sol.controls = cur.u;
  sol.states = cur.x;
  return sol;
}

MpcExpert::MpcExpert(MpcConfig cfg, QuadParams params) : cfg_(cfg), params_(params) {
  cfg_.validate();
  params_.validate();
}

Command MpcExpert::command(const QuadState& s, const ReferenceTrajectory& ref) {
  const auto window = reference_window(ref, s.t, cfg_);
  last_ = solve_mpc(s, window, cfg_, params_, have_last_ ? &last_ : nullptr);
  have_last_ = !last_.fallback;
  if (last_.fallback) ++fallbacks_;
  return last_.first();
}

void MpcExpert::reset() {
  have_last_ = false;
  last_ = MpcSolution{};
  fallbacks_ = 0;
}

Controller expert_controller(MpcExpert& expert) {
  return [&expert](const TickContext& ctx) {
    const Command u = expert.command(ctx.state, *ctx.reference);
    return ControlOutput{u, u, CommandSource::Expert};
  };
}

}  // namespace gazeracer
