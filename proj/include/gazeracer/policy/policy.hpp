#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gazeracer/attention/net.hpp"
#include "gazeracer/nn/layers.hpp"
#include "gazeracer/sim/rollout.hpp"
#include "gazeracer/tracks/features.hpp"

namespace gazeracer::policy {

enum class Modality { Attention, Tracks, Image };
std::string_view to_string(Modality m);
/// Throws std::invalid_argument on an unknown name.
Modality modality_from_string(std::string_view name);

/// Rotation matrix (row-major), linear velocity, angular velocity.
constexpr int kSampleDims = 15;
void encode_sample(const Eigen::Quaterniond& q, const Eigen::Vector3d& v, const Eigen::Vector3d& w,
                   float* out);

struct PolicyConfig {
  Modality modality = Modality::Attention;
  int ref_len = 25;     // 50 Hz over 0.5 s
  int state_len = 50;   // 100 Hz over 0.5 s
  int visual_len = 5;   // 25 Hz over 0.2 s
  int attention_features = 48;
  int image_width = 128;
  int image_height = 96;
  std::vector<int> temporal_channels{64, 32, 32};
  std::vector<int> head{256, 128, 64};
  int pointnet_units = 64;
  std::vector<int> image_channels{16, 32, 32, 32};

  void validate() const;
  /// Floats per visual sample: encoder features, 40 x 5 tracks, or 3 x H x W.
  int visual_sample_size() const;
};

/// Time-major windows, oldest sample first.
struct ObservationBundle {
  std::vector<float> reference;  // ref_len x 15
  std::vector<float> state;      // state_len x 15
  std::vector<float> visual;     // visual_len x visual_sample_size

  bool finite() const;
};

/// Network inputs for a batch: references and states as (N, 15, L); visual
/// as (N, F, L) for attention, (N * L, 5, 40) for tracks and
/// (N * L, 3, H, W) for images.
template <class T>
struct PolicyBatch {
  nn::Tensor<T> reference;
  nn::Tensor<T> state;
  nn::Tensor<T> visual;
  int size = 0;
};

template <class T>
PolicyBatch<T> make_batch(const PolicyConfig& cfg, std::span<const ObservationBundle* const> obs);

/// Output normalization: ((c - g) / g, rates / w_max).
struct CommandScale {
  double g = 9.81;
  double w_max = 6.0;

  Eigen::Vector4d normalize(const Command& u) const;
  Command denormalize(const Eigen::Vector4d& y) const;
};

/// Temporal-convolution branches over reference, state and visual windows
/// (kernel 2, ReLU, mean over time), concatenated into a four-layer head.
/// Tracks first pass a shared per-point map with max-pooling over slots;
/// images pass a stride-2 conv stack per frame.
template <class T>
class PolicyModel {
 public:
  PolicyModel(PolicyConfig cfg, std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }

  /// (N, 4) normalized commands.
  nn::Tensor<T> forward(const PolicyBatch<T>& batch, bool train);
  /// Input gradients in the batch layout.
  PolicyBatch<T> backward(const nn::Tensor<T>& grad_out);

  Eigen::Vector4d predict(const ObservationBundle& obs);

  std::vector<nn::Param<T>*> params();
  std::string tag() const;
  std::string save();
  /// Throws std::invalid_argument if the file holds another modality or
  /// architecture.
  void load(const std::string& bytes);

 private:
  PolicyConfig cfg_;
  nn::Sequential<T> ref_branch_, state_branch_, visual_pre_, visual_branch_, head_;
  int batch_ = 0;
  int visual_width_ = 0;  // per-sample channels entering the visual temporal branch
};

using Policy = PolicyModel<float>;

/// forward_policy: de-normalized, unclamped.
Command forward_policy(Policy& model, const ObservationBundle& obs, const CommandScale& scale);

struct ActResult {
  Command command;
  bool fallback = false;  // non-finite output replaced by hover
};

/// forward_policy followed by clamp_command.
ActResult act(Policy& model, const ObservationBundle& obs, const QuadParams& params);

/// Per-frame visual features for one modality.
class VisualFrontEnd {
 public:
  virtual ~VisualFrontEnd() = default;
  virtual int sample_size() const = 0;
  virtual std::vector<float> features(const Frame& frame) = 0;
  virtual void reset() {}
};

class AttentionFrontEnd final : public VisualFrontEnd {
 public:
  explicit AttentionFrontEnd(attention::AttentionNet& net) : net_(net) {}
  int sample_size() const override { return net_.config().feature_length(); }
  std::vector<float> features(const Frame& frame) override { return net_.encoder_features(frame); }

 private:
  attention::AttentionNet& net_;
};

class TrackFrontEnd final : public VisualFrontEnd {
 public:
  TrackFrontEnd(tracks::TrackerConfig cfg, std::uint64_t seed, double dt) : tracker_(std::move(cfg), seed), dt_(dt) {}
  int sample_size() const override { return tracks::FeatureTrackSet::kCount * tracks::FeatureTrackSet::kDims; }
  std::vector<float> features(const Frame& frame) override { return tracker_.step(frame, dt_).flatten(); }
  void reset() override { tracker_.reset(); }

 private:
  tracks::FeatureTracker tracker_;
  double dt_;
};

/// Channel-major RGB in [-1, 1].
class ImageFrontEnd final : public VisualFrontEnd {
 public:
  ImageFrontEnd(int width, int height) : w_(width), h_(height) {}
  int sample_size() const override { return 3 * w_ * h_; }
  std::vector<float> features(const Frame& frame) override;

 private:
  int w_, h_;
};

/// Builds the windows at each control tick. States come from the physics
/// history, references from the reference at past tick times, and visual
/// features from a frame rendered whenever the vision clock ticks. Missing
/// history repeats the oldest sample.
class ObservationAssembler {
 public:
  ObservationAssembler(PolicyConfig cfg, VisualFrontEnd& front_end, CameraModel camera);

  ObservationBundle assemble(const TickContext& ctx);
  void reset();
  /// Frame rendered at the most recent vision tick.
  const Frame& last_frame() const { return frame_; }

 private:
  PolicyConfig cfg_;
  VisualFrontEnd& front_;
  CameraModel cam_;
  std::deque<std::vector<float>> visual_;
  Frame frame_;
};

/// Builds a fresh front-end per rollout; tracks get a seeded tracker stepping
/// at the vision period. Attention requires `net` with a matching feature
/// length.
using FrontEndFactory = std::function<std::unique_ptr<VisualFrontEnd>(std::uint64_t seed)>;
FrontEndFactory front_end_factory(const PolicyConfig& cfg, attention::AttentionNet* net, const CameraModel& camera,
                                  int vision_hz);

/// Closed-loop controller: assemble, act, apply.
Controller policy_controller(Policy& model, ObservationAssembler& assembler);

}  // namespace gazeracer::policy
