#include "gazeracer/sim/rollout.hpp"

#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace gazeracer {

std::string_view to_string(CommandSource source) {
  switch (source) {
    case CommandSource::Expert: return "expert";
    case CommandSource::Policy: return "policy";
    case CommandSource::Noise: return "noise";
  }
  return "unknown";
}

void RateConfig::validate() const {
  if (physics_hz <= 0 || control_hz <= 0 || vision_hz <= 0 || physics_hz % control_hz != 0 ||
      control_hz % vision_hz != 0) {
    throw std::invalid_argument("rates: physics_hz must be a multiple of control_hz, and "
                                "control_hz a multiple of vision_hz");
  }
  if (1.0 / physics_hz > 0.05) throw std::invalid_argument("rates: physics_hz below 20 Hz");
  if (!(timeout_factor > 0.0) || !(start_jitter >= 0.0)) {
    throw std::invalid_argument("rates: timeout_factor must be positive, start_jitter >= 0");
  }
  params.validate();
}

RolloutLog run_rollout(const Controller& controller, const Track& track,
                       const ReferenceTrajectory& reference, const RateConfig& rates,
                       std::uint64_t seed) {
  rates.validate();
  if (reference.empty()) throw std::invalid_argument("run_rollout: empty reference");
  Rng rng(seed);

  QuadState state = initial_state(reference);
  if (rates.start_jitter > 0.0) {
    for (int i = 0; i < 3; ++i) state.p[i] += uniform(rng, -rates.start_jitter, rates.start_jitter);
  }

  RolloutLog log;
  log.total_gates = static_cast<int>(track.gates.size());
  log.reference_duration = reference.duration();
  const double dt_physics = 1.0 / rates.physics_hz;
  const int ppc = rates.physics_per_control();
  const int cpv = rates.control_per_vision();
  const double timeout = rates.timeout_factor * reference.duration();

  std::vector<QuadState> history;
  history.push_back(state);
  int next_gate = 0;

  for (int tick = 0;; ++tick) {
    const double t = static_cast<double>(tick) / rates.control_hz;
    if (t >= timeout) {
      log.termination = {RunStatus::Crashed, TerminationCause::Timeout};
      break;
    }
    TickContext ctx;
    ctx.tick = tick;
    ctx.t = t;
    ctx.state = state;
    ctx.physics_history = history;
    ctx.reference = &reference;
    ctx.track = &track;
    ctx.next_gate = next_gate;
    ctx.frame_id = tick / cpv;
    ctx.new_frame = tick % cpv == 0;
    ctx.rates = &rates;
    ctx.rng = &rng;

    ControlOutput out;
    try {
      out = controller(ctx);
    } catch (const std::exception& e) {
      log.failure = e.what();
      log.termination = {RunStatus::Crashed, TerminationCause::ControllerFailure};
      break;
    }

    TickRecord rec;
    rec.state = state;
    rec.applied = clamp_command(out.command, rates.params).command;
    rec.expert = out.expert;
    rec.source = out.source;
    rec.frame_id = ctx.frame_id;

    Termination term;
    for (int k = 0; k < ppc && term.status == RunStatus::Running; ++k) {
      QuadState next = step_dynamics(state, rec.applied, rates.params, dt_physics);
      // Keep timestamps exact multiples of the physics period.
      next.t = t + static_cast<double>(k + 1) * dt_physics;
      bool frame_hit = false;
      for (const Gate& g : track.gates) {
        const GateCrossing c = check_gate_pass(state, next, g);
        if (c == GateCrossing::FrameHit) {
          frame_hit = true;
          rec.gate_events.push_back({g.index, false});
        } else if (c == GateCrossing::Pass && g.index == next_gate) {
          rec.gate_events.push_back({g.index, true});
          ++next_gate;
        }
      }
      state = next;
      history.push_back(state);
      term = check_termination(state, track, next_gate, frame_hit);
    }
    log.ticks.push_back(std::move(rec));
    if (term.status != RunStatus::Running) {
      log.termination = term;
      break;
    }
  }
  log.gates_passed = next_gate;
  return log;
}

std::string rollout_to_csv(const RolloutLog& log) {
  std::ostringstream os;
  os << "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,c_cmd,wx_cmd,wy_cmd,wz_cmd,c_exp,wx_exp,wy_exp,"
        "wz_exp,source,gate_event\n";
  os << std::setprecision(17);
  for (const auto& r : log.ticks) {
    const auto& s = r.state;
    os << s.t << ',' << s.p.x() << ',' << s.p.y() << ',' << s.p.z() << ',' << s.v.x() << ','
       << s.v.y() << ',' << s.v.z() << ',' << s.q.w() << ',' << s.q.x() << ',' << s.q.y() << ','
       << s.q.z() << ',' << s.w.x() << ',' << s.w.y() << ',' << s.w.z() << ',' << r.applied.c
       << ',' << r.applied.rates.x() << ',' << r.applied.rates.y() << ',' << r.applied.rates.z()
       << ',';
    if (r.expert) {
      os << r.expert->c << ',' << r.expert->rates.x() << ',' << r.expert->rates.y() << ','
         << r.expert->rates.z();
    } else {
      os << "nan,nan,nan,nan";
    }
    os << ',' << to_string(r.source) << ',';
    for (std::size_t i = 0; i < r.gate_events.size(); ++i) {
      if (i) os << '|';
      os << (r.gate_events[i].pass ? "pass:" : "hit:") << r.gate_events[i].gate;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace gazeracer
