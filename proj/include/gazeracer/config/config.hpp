#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazeracer/attention/dataset.hpp"
#include "gazeracer/attention/net.hpp"
#include "gazeracer/dagger/dagger.hpp"
#include "gazeracer/mpc/mpc.hpp"
#include "gazeracer/policy/policy.hpp"

namespace gazeracer::config {

/// A bad key, type or value; the message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ReferenceConfig {
  ReferenceSetOptions options;
  std::uint64_t seed = 1;  // reference sets do not depend on the run seed
};

struct AttentionConfig {
  int base_channels = 16;
  double val_fraction = 0.2;
  attention::TrainAttentionConfig train;
};

struct EvalConfig {
  int reps = 10;
  std::string split = "test";  // train | test
};

struct BenchConfig {
  int ticks = 500;
  double budget_ms = 40.0;
};

/// Fully resolved workbench configuration. Every field has a default; a
/// config file overrides any subset.
struct Config {
  RateConfig rates;
  CameraModel camera;
  MpcConfig mpc;
  ReferenceConfig references;
  std::string data_track = "figure8";
  attention::DataGenConfig data;
  AttentionConfig attention;
  std::string policy_track = "oval";
  policy::PolicyConfig policy;
  dagger::DaggerSchedule dagger = dagger::DaggerSchedule::desk();
  EvalConfig eval;
  BenchConfig bench;
  int jobs = 1;

  /// Cross-field checks plus each module's own validation.
  void validate() const;

  attention::AttentionNetConfig attention_net() const {
    return {camera.width, camera.height, attention.base_channels};
  }
  /// Policy configuration with visual sizes tied to the camera.
  policy::PolicyConfig resolved_policy() const;
  /// The "train" or "test" reference set on `track`, seeded by references.seed.
  std::vector<ReferenceTrajectory> reference_split(const Track& track, const std::string& split) const;
};

/// Strict parse: unknown keys and wrong types are rejected.
Config parse_config(const std::string& json_text);
Config load_config(const std::string& path);
/// Resolved configuration as JSON (the config snapshot).
std::string to_json(const Config& cfg);
/// Every key with its type, default and description.
std::string schema_json();

/// Named presets: "desk" (the defaults) and "full" (400x300 attention,
/// batch 128, lr 2e-4, 5 epochs, 5 x 30 rollouts x 20 epochs).
std::string preset_json(const std::string& name);

}  // namespace gazeracer::config
