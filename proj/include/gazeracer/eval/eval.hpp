#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gazeracer/mpc/mpc.hpp"
#include "gazeracer/policy/policy.hpp"

namespace gazeracer::eval {

/// Builds a fresh closed-loop controller for one trial.
using TrialFactory = std::function<Controller(std::uint64_t seed)>;

TrialFactory expert_trials(const MpcConfig& mpc, const QuadParams& params);
TrialFactory hover_trials();
TrialFactory policy_trials(policy::Policy& model, policy::FrontEndFactory front_ends, const CameraModel& camera);

struct Trial {
  int reference_id = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  int gates_passed = 0;
  int total_gates = 0;
  std::string terminated;  // completed / crashed / timeout
  std::string cause;

  bool success() const { return gates_passed == total_gates && total_gates > 0; }
};

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// 95% Wilson score interval.
Interval wilson_interval(int successes, int trials, double z = 1.959963984540054);

struct SuccessReport {
  std::vector<Trial> trials;
  int successes = 0;
  double rate = 0.0;
  Interval ci;
};

/// reps trials per reference; trial seeds derive from (seed, reference, rep).
SuccessReport evaluate_success(const TrialFactory& factory, const Track& track,
                               const std::vector<ReferenceTrajectory>& refs, int reps, const RateConfig& rates,
                               std::uint64_t seed);

/// Command prediction at one tick while the expert flies.
using ShadowPredictor = std::function<Command(const TickContext&)>;
using ShadowFactory = std::function<ShadowPredictor(std::uint64_t seed)>;

ShadowFactory policy_shadow(policy::Policy& model, policy::FrontEndFactory front_ends, const CameraModel& camera);

/// Per command (thrust, roll, pitch, yaw rate).
struct CommandErrors {
  std::array<double, 4> mse{};
  std::array<double, 4> l1{};
};

struct ShadowReport {
  CommandErrors normalized;
  CommandErrors raw;
  std::size_t ticks = 0;
};

/// The expert flies each reference once; predictors run in shadow at every
/// control tick and never affect the applied command.
ShadowReport offline_command_eval(const ShadowFactory& factory, const Track& track,
                                  const std::vector<ReferenceTrajectory>& refs, const RateConfig& rates,
                                  const MpcConfig& mpc, std::uint64_t seed);

struct LatencyStats {
  std::vector<double> samples_ms;  // one per control tick
  double p50 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Nearest-rank percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// Times the full per-tick policy path (render, visual features, window
/// assembly, forward, clamp) while the expert flies `ref`. Every tick renders,
/// so the numbers bound the cost of a vision tick.
LatencyStats bench_act(policy::Policy& model, policy::VisualFrontEnd& front_end, const CameraModel& camera,
                       const Track& track, const ReferenceTrajectory& ref, const RateConfig& rates,
                       const MpcConfig& mpc, int ticks);

inline constexpr std::array<const char*, 4> kCommandNames{"throttle", "roll", "pitch", "yaw"};

// CSV: reference_id,rep,gates_passed,total_gates,terminated,cause
std::string success_to_csv(const SuccessReport& report);

struct NamedShadow {
  std::string name;
  ShadowReport report;
};
// CSV: policy,command,mse,l1,mse_raw,l1_raw
std::string shadow_to_csv(const std::vector<NamedShadow>& reports);

struct NamedSuccess {
  std::string name;
  SuccessReport report;
};
/// Success rates with intervals, shadow tables, and a comparison block when
/// more than one policy is reported.
std::string summary_text(const std::vector<NamedSuccess>& success, const std::vector<NamedShadow>& shadow);

/// Writes success.csv (first entry), shadow.csv, summary.txt and
/// config_snapshot.json into dir.
void write_report(const std::string& dir, const std::vector<NamedSuccess>& success,
                  const std::vector<NamedShadow>& shadow, const std::string& config_json);

}  // namespace gazeracer::eval
