#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazeracer/mpc/reference.hpp"
#include "gazeracer/sim/quad.hpp"
#include "gazeracer/sim/track.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer {

enum class CommandSource { Expert, Policy, Noise };
std::string_view to_string(CommandSource source);

struct RateConfig {
  int physics_hz = 100;
  int control_hz = 50;
  int vision_hz = 25;
  double timeout_factor = 3.0;  // timeout = factor * reference duration
  double start_jitter = 0.0;    // uniform +/- m on the initial position
  QuadParams params;

  int physics_per_control() const { return physics_hz / control_hz; }
  int control_per_vision() const { return control_hz / vision_hz; }
  void validate() const;
};

/// What a controller sees at one control tick.
struct TickContext {
  int tick = 0;
  double t = 0.0;
  QuadState state;
  /// Every physics-rate state so far, oldest first; back() == state.
  std::span<const QuadState> physics_history;
  const ReferenceTrajectory* reference = nullptr;
  const Track* track = nullptr;
  int next_gate = 0;
  /// Vision frame counter; increments at vision rate (zero-order hold between).
  int frame_id = 0;
  bool new_frame = false;
  const RateConfig* rates = nullptr;
  Rng* rng = nullptr;
};

struct ControlOutput {
  Command command;
  std::optional<Command> expert;  // expert label, when known
  CommandSource source = CommandSource::Policy;
};

using Controller = std::function<ControlOutput(const TickContext&)>;

struct GateEvent {
  int gate = 0;
  bool pass = true;  // false = frame hit
};

struct TickRecord {
  QuadState state;  // state at the start of the tick
  Command applied;
  std::optional<Command> expert;
  CommandSource source = CommandSource::Policy;
  int frame_id = 0;
  std::vector<GateEvent> gate_events;
};

struct RolloutLog {
  std::vector<TickRecord> ticks;
  Termination termination;
  int gates_passed = 0;
  int total_gates = 0;
  double reference_duration = 0.0;
  std::string failure;  // controller exception message, if any

  bool completed() const { return termination.status == RunStatus::Completed; }
};

/// Closed-loop simulation: physics at physics_hz, controller at control_hz,
/// frame ids at vision_hz. The initial state is the reference's first sample
/// (plus seeded position jitter). Deterministic given seed.
RolloutLog run_rollout(const Controller& controller, const Track& track,
                       const ReferenceTrajectory& reference, const RateConfig& rates,
                       std::uint64_t seed);

// CSV with header t,px,...,source,gate_event.
std::string rollout_to_csv(const RolloutLog& log);

}  // namespace gazeracer
