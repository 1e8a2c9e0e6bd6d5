#include <algorithm>
#include <stdexcept>

#include "gazeracer/policy/policy.hpp"

namespace gazeracer::policy {

std::vector<float> ImageFrontEnd::features(const Frame& frame) {
  if (frame.width != w_ || frame.height != h_ || !frame.valid()) {
    throw std::invalid_argument("image front-end: expected a " + std::to_string(w_) + "x" + std::to_string(h_) +
                                " frame, got " + std::to_string(frame.width) + "x" + std::to_string(frame.height));
  }
  const std::size_t plane = static_cast<std::size_t>(w_) * h_;
  std::vector<float> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) out[c * plane + i] = frame.pixels[3 * i + c] * (1.0f / 127.5f) - 1.0f;
  }
  return out;
}

ObservationAssembler::ObservationAssembler(PolicyConfig cfg, VisualFrontEnd& front_end, CameraModel camera)
    : cfg_(std::move(cfg)), front_(front_end), cam_(camera) {
  cfg_.validate();
  if (front_.sample_size() != cfg_.visual_sample_size()) {
    throw std::invalid_argument("observation: front-end yields " + std::to_string(front_.sample_size()) +
                                " features per frame, policy expects " + std::to_string(cfg_.visual_sample_size()));
  }
}

void ObservationAssembler::reset() {
  visual_.clear();
  front_.reset();
  frame_ = Frame();
}

ObservationBundle ObservationAssembler::assemble(const TickContext& ctx) {
  if (ctx.reference == nullptr || ctx.track == nullptr || ctx.physics_history.empty()) {
    throw std::invalid_argument("observation: tick context lacks reference, track or history");
  }
  ObservationBundle o;

  o.reference.resize(static_cast<std::size_t>(cfg_.ref_len) * kSampleDims);
  const double t0 = ctx.physics_history.front().t;
  for (int k = 0; k < cfg_.ref_len; ++k) {
    const double tq = std::max(t0, ctx.t - (cfg_.ref_len - 1 - k) * ReferenceTrajectory::kDt);
    const RefSample r = ctx.reference->at(tq);
    encode_sample(r.q, r.v, r.w, o.reference.data() + static_cast<std::size_t>(k) * kSampleDims);
  }

  o.state.resize(static_cast<std::size_t>(cfg_.state_len) * kSampleDims);
  const auto& hist = ctx.physics_history;
  const auto have = static_cast<int>(hist.size());
  for (int k = 0; k < cfg_.state_len; ++k) {
    const int idx = std::max(0, have - cfg_.state_len + k);
    const QuadState& s = hist[static_cast<std::size_t>(idx)];
    encode_sample(s.q, s.v, s.w, o.state.data() + static_cast<std::size_t>(k) * kSampleDims);
  }

  if (ctx.new_frame || visual_.empty()) {
    frame_ = render_frame(ctx.state, *ctx.track, cam_);
    frame_.id = ctx.frame_id;
    frame_.timestamp = ctx.t;
    visual_.push_back(front_.features(frame_));
    while (static_cast<int>(visual_.size()) > cfg_.visual_len) visual_.pop_front();
  }
  const std::size_t f = static_cast<std::size_t>(cfg_.visual_sample_size());
  o.visual.reserve(f * cfg_.visual_len);
  const int missing = cfg_.visual_len - static_cast<int>(visual_.size());
  for (int k = 0; k < missing; ++k) o.visual.insert(o.visual.end(), visual_.front().begin(), visual_.front().end());
  for (const auto& v : visual_) o.visual.insert(o.visual.end(), v.begin(), v.end());
  return o;
}

FrontEndFactory front_end_factory(const PolicyConfig& cfg, attention::AttentionNet* net, const CameraModel& camera,
                                  int vision_hz) {
  switch (cfg.modality) {
    case Modality::Attention:
      if (net == nullptr) throw std::invalid_argument("attention modality needs an attention network");
      if (net->config().feature_length() != cfg.attention_features) {
        throw std::invalid_argument("attention network yields " + std::to_string(net->config().feature_length()) +
                                    " features, policy expects " + std::to_string(cfg.attention_features));
      }
      if (net->config().width != camera.width || net->config().height != camera.height) {
        throw std::invalid_argument("attention network resolution differs from the camera");
      }
      return [net](std::uint64_t) { return std::make_unique<AttentionFrontEnd>(*net); };
    case Modality::Tracks: {
      const tracks::TrackerConfig tc = tracks::TrackerConfig::for_resolution(camera.width);
      const double dt = 1.0 / vision_hz;
      return [tc, dt](std::uint64_t seed) { return std::make_unique<TrackFrontEnd>(tc, seed, dt); };
    }
    case Modality::Image: {
      if (cfg.image_width != camera.width || cfg.image_height != camera.height) {
        throw std::invalid_argument("image policy resolution differs from the camera");
      }
      const int w = cfg.image_width, h = cfg.image_height;
      return [w, h](std::uint64_t) { return std::make_unique<ImageFrontEnd>(w, h); };
    }
  }
  throw std::invalid_argument("unknown modality");
}

Controller policy_controller(Policy& model, ObservationAssembler& assembler) {
  return [&model, &assembler](const TickContext& ctx) {
    const ActResult a = act(model, assembler.assemble(ctx), ctx.rates->params);
    return ControlOutput{a.command, std::nullopt, CommandSource::Policy};
  };
}

}  // namespace gazeracer::policy
