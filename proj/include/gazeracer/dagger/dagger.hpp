#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gazeracer/mpc/mpc.hpp"
#include "gazeracer/policy/policy.hpp"

namespace gazeracer::dagger {

struct DaggerSchedule {
  int iterations = 5;
  int rollouts = 30;  // per iteration
  int epochs = 20;    // per iteration
  double noise_p_start = 0.05;
  double noise_p_end = 0.25;
  double noise_thrust = 1.0;  // m/s^2
  double noise_rates = 0.3;   // rad/s
  double tau_thrust = 2.0;    // m/s^2, first iteration
  double tau_rates = 0.5;     // rad/s, first iteration
  double tau_growth = 1.5;    // per iteration
  int batch = 64;
  double lr = 1e-3;

  /// Three iterations of six rollouts and ten epochs.
  static DaggerSchedule desk();
  void validate() const;
  int total_rollouts() const { return iterations * rollouts; }
  int total_epochs() const { return iterations * epochs; }
  /// Noise probability ramps linearly from start to end over the iterations.
  double noise_probability(int iteration) const;
  /// Blending threshold in normalized command units.
  Eigen::Vector4d tau(int iteration, const policy::CommandScale& scale) const;
};

/// Append-only store of (observation, expert label) pairs. Visual features
/// are pooled per rendered frame and shared by the windows holding them.
class AggregatedDataset {
 public:
  explicit AggregatedDataset(policy::PolicyConfig cfg);

  std::size_t size() const { return labels_.size(); }
  const policy::PolicyConfig& config() const { return cfg_; }

  /// Adds a visual sample; returns its pool index.
  std::size_t add_visual(std::vector<float> features);
  /// `visual` holds visual_len pool indices, oldest first.
  void add(std::vector<float> reference, std::vector<float> state, std::vector<std::size_t> visual,
           const Eigen::Vector4d& label, int iteration);

  policy::ObservationBundle bundle(std::size_t i) const;
  const Eigen::Vector4d& label(std::size_t i) const { return labels_[i]; }
  int iteration(std::size_t i) const { return iterations_[i]; }

 private:
  policy::PolicyConfig cfg_;
  std::vector<std::vector<float>> pool_;
  std::vector<std::vector<float>> reference_, state_;
  std::vector<std::vector<std::size_t>> visual_;
  std::vector<Eigen::Vector4d> labels_;  // normalized expert commands
  std::vector<int> iterations_;
};

struct CollectConfig {
  double noise_probability = 0.0;
  Eigen::Vector4d tau = Eigen::Vector4d::Zero();  // normalized units
  double noise_thrust = 1.0;
  double noise_rates = 0.3;
  int iteration = 0;
};

struct CollectResult {
  RolloutLog log;
  std::size_t expert_ticks = 0;
  std::size_t policy_ticks = 0;
  std::size_t noisy_ticks = 0;
  std::size_t samples = 0;

  double expert_fraction() const;
};

/// One rollout mixing policy and expert. Every tick stores the clean expert
/// label; the policy's command is applied when within tau of the expert in
/// every dimension, otherwise the expert's, perturbed by Gaussian noise with
/// the configured probability.
CollectResult collect_rollout(policy::Policy& model, MpcExpert& expert, policy::VisualFrontEnd& front_end,
                              const CameraModel& camera, const Track& track, const ReferenceTrajectory& ref,
                              const RateConfig& rates, const CollectConfig& cfg, std::uint64_t seed,
                              AggregatedDataset& out);

struct TrainConfig {
  int epochs = 20;
  int batch = 64;
  double lr = 1e-3;
};

/// MSE regression on normalized commands with Adam and seeded shuffles.
/// Returns the mean training loss per epoch.
std::vector<double> train_iteration(policy::Policy& model, const AggregatedDataset& data, const TrainConfig& cfg,
                                    std::uint64_t seed);

struct RolloutRecord {
  int iteration = 0;
  int rollout = 0;
  int reference = 0;
  std::uint64_t seed = 0;
  int gates_passed = 0;
  int total_gates = 0;
  std::string termination;
  double expert_fraction = 0.0;
  std::size_t dataset_size = 0;

  std::string to_json() const;
};

struct IterationRecord {
  int iteration = 0;
  std::vector<double> losses;
  std::string weights;  // checkpoint after training
};

struct DaggerSetup {
  DaggerSchedule schedule;
  RateConfig rates;
  MpcConfig mpc;
  CameraModel camera;
};

struct DaggerResult {
  std::vector<RolloutRecord> rollouts;
  std::vector<IterationRecord> iterations;
  std::size_t dataset_size = 0;
};

/// Iterations of round-robin collection over the references, aggregation and
/// training. Callbacks fire after each rollout and each iteration.
DaggerResult run_dagger(policy::Policy& model, const policy::FrontEndFactory& front_ends, const Track& track,
                        const std::vector<ReferenceTrajectory>& refs, const DaggerSetup& setup, std::uint64_t seed,
                        const std::function<void(const RolloutRecord&)>& on_rollout = {},
                        const std::function<void(const IterationRecord&)>& on_iteration = {});

}  // namespace gazeracer::dagger
