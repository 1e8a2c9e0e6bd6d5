#pragma once

#include <vector>

#include "gazeracer/mpc/reference.hpp"
#include "gazeracer/sim/quad.hpp"
#include "gazeracer/sim/rollout.hpp"

namespace gazeracer {

struct MpcConfig {
  double horizon = 1.0;  // s
  int nodes = 20;        // control intervals over the horizon
  double w_p = 50.0;
  double w_v = 10.0;
  double w_q = 5.0;
  double w_u = 1.0;
  int max_iterations = 30;
  double tol = 1e-4;  // relative cost decrease that counts as converged

  double node_dt() const { return horizon / nodes; }
  void validate() const;
};

struct MpcSolution {
  std::vector<Command> controls;  // nodes entries, first is applied
  std::vector<QuadState> states;  // nodes + 1 predicted states
  std::vector<double> cost_trace;  // cost of the initial guess, then each accepted iterate
  int iterations = 0;
  bool converged = false;
  bool fallback = false;  // non-finite cost; controls are hover
  double t0 = 0.0;        // time the solve was anchored at

  double cost() const { return cost_trace.empty() ? 0.0 : cost_trace.back(); }
  const Command& first() const { return controls.front(); }
};

/// Reference states at the node times t0 + k * node_dt, k = 0..nodes.
std::vector<RefSample> reference_window(const ReferenceTrajectory& ref, double t0,
                                        const MpcConfig& cfg);

/// Tracking cost of an open-loop control sequence from s.
double mpc_cost(const QuadState& s, const std::vector<Command>& controls,
                const std::vector<RefSample>& window, const MpcConfig& cfg,
                const QuadParams& params);

/// iLQR over the simplified model with backtracking (1, 0.5, 0.25). The warm
/// start, when given, is shifted to s.t; otherwise hover controls seed the solve.
MpcSolution solve_mpc(const QuadState& s, const std::vector<RefSample>& window,
                      const MpcConfig& cfg, const QuadParams& params,
                      const MpcSolution* warm_start = nullptr);

/// Receding-horizon expert that keeps its own warm start between ticks.
class MpcExpert {
 public:
  MpcExpert(MpcConfig cfg, QuadParams params);

  Command command(const QuadState& s, const ReferenceTrajectory& ref);
  const MpcSolution& last() const { return last_; }
  int fallback_count() const { return fallbacks_; }
  void reset();

  const MpcConfig& config() const { return cfg_; }
  const QuadParams& params() const { return params_; }

 private:
  MpcConfig cfg_;
  QuadParams params_;
  MpcSolution last_;
  bool have_last_ = false;
  int fallbacks_ = 0;
};

/// Rollout controller that flies the expert and labels every tick with it.
Controller expert_controller(MpcExpert& expert);

}  // namespace gazeracer
