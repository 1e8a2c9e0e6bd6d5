#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gazeracer/gaze/attention_map.hpp"
#include "gazeracer/nn/layers.hpp"
#include "gazeracer/render/camera.hpp"

namespace gazeracer::attention {

/// Encoder: 3x3 conv stem + max-pool, then residual blocks of base, 2*base,
/// 4*base, 8*base channels with strides 1, 2, 2, 2 (total /16). Decoder:
/// nearest upsample + 3x3 conv + ReLU back through the block resolutions,
/// a 1x1 conv to one channel and a final upsample to W x H.
struct AttentionNetConfig {
  int width = 128;
  int height = 96;
  int base_channels = 16;

  void validate() const;
  /// Encoder feature grid, ceil(W / 16) x ceil(H / 16).
  int feature_width() const;
  int feature_height() const;
  int feature_length() const { return feature_width() * feature_height(); }
};

/// (N, 3, H, W) in [-1, 1] from 8-bit frames; all frames must match the size.
nn::Tensor<float> frames_to_tensor(std::span<const Frame* const> frames);
nn::Tensor<float> frame_to_tensor(const Frame& frame);

template <class T>
class AttentionModel {
 public:
  explicit AttentionModel(AttentionNetConfig cfg, std::uint64_t seed = 0);

  const AttentionNetConfig& config() const { return cfg_; }

  /// (N, 3, H, W) -> (N, 1, H, W) pre-softmax scores.
  nn::Tensor<T> logits(const nn::Tensor<T>& images, bool train);
  /// Backpropagates d loss / d logits through decoder and encoder.
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_logits);

  /// (N, 3, H, W) -> (N, F) channel-mean of the last encoder block.
  nn::Tensor<T> features(const nn::Tensor<T>& images);

  AttentionMap predict(const Frame& frame);
  std::vector<AttentionMap> predict(std::span<const Frame* const> frames);
  std::vector<float> encoder_features(const Frame& frame);

  std::vector<nn::Param<T>*> params();
  nn::Sequential<T>& encoder() { return encoder_; }
  nn::Sequential<T>& decoder() { return decoder_; }

  std::string save();
  void load(const std::string& bytes);

  static constexpr const char* kWeightsTag = "attention-net";

 private:
  void check_input(const nn::Tensor<T>& images) const;

  AttentionNetConfig cfg_;
  nn::Sequential<T> encoder_;
  nn::Sequential<T> decoder_;
  nn::ChannelMean<T> pool_;
};

using AttentionNet = AttentionModel<float>;

/// Photometric augmentation probabilities; geometry is never changed.
struct AugmentConfig {
  double brightness = 0.5;
  double contrast = 0.5;
  double saturation = 0.5;
  double hue = 0.5;
  double noise = 0.5;
  double blur = 0.5;
  double erase = 0.5;

  static AugmentConfig none() { return {0, 0, 0, 0, 0, 0, 0}; }
};

/// Applies each transform independently with its probability, in the order
/// above. Erase fills a rectangle of 5-20% of the image with gray (128).
Frame augment(const Frame& frame, std::uint64_t seed, const AugmentConfig& cfg = {});

/// Frames with ground-truth maps; lap[i] groups items for the shuffled
/// baseline (ascending).
struct AttentionDataset {
  std::vector<Frame> frames;
  std::vector<AttentionMap> maps;
  std::vector<int> lap;

  std::size_t size() const { return frames.size(); }
  void validate() const;
  /// First index of every lap.
  std::vector<std::size_t> lap_starts() const;
  /// Items whose lap is in [lap_lo, lap_hi).
  AttentionDataset laps(int lap_lo, int lap_hi) const;
};

/// Splits by lap: the last `fraction` of laps (at least one) is held out.
void split_dataset(const AttentionDataset& all, double val_fraction, AttentionDataset& train,
                   AttentionDataset& val);

struct TrainAttentionConfig {
  int epochs = 5;
  int batch = 128;
  double lr = 2e-4;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_kl = 0.0;  // mean batch loss
  MetricSummary val;       // on the held-out split, if any
};

struct TrainAttentionResult {
  std::vector<EpochLog> epochs;
  double final_loss = 0.0;
};

/// Minibatch Adam on the batch-mean KL(target || softmax(logits)). Items are
/// reshuffled every epoch. Throws std::runtime_error naming the epoch and
/// batch when the loss becomes non-finite.
TrainAttentionResult train_attention(AttentionNet& net, const AttentionDataset& train,
                                     const AttentionDataset* val, const TrainAttentionConfig& cfg,
                                     std::uint64_t seed,
                                     const std::function<void(const EpochLog&)>& on_epoch = {});

/// Predicted maps for every frame, evaluated in batches.
std::vector<AttentionMap> predict_all(AttentionNet& net, const std::vector<Frame>& frames,
                                      int batch = 32);

}  // namespace gazeracer::attention
