#include "gazeracer/policy/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "gazeracer/nn/weights.hpp"
#include "gazeracer/util/fpenv.hpp"

namespace gazeracer::policy {

using nn::Shape;
using nn::Tensor;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Attention: return "attention";
    case Modality::Tracks: return "tracks";
    case Modality::Image: return "image";
  }
  return "unknown";
}

Modality modality_from_string(std::string_view name) {
  if (name == "attention") return Modality::Attention;
  if (name == "tracks") return Modality::Tracks;
  if (name == "image") return Modality::Image;
  throw std::invalid_argument("unknown modality '" + std::string(name) + "' (attention, tracks, image)");
}

void encode_sample(const Eigen::Quaterniond& q, const Eigen::Vector3d& v, const Eigen::Vector3d& w, float* out) {
  const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out[3 * i + j] = static_cast<float>(r(i, j));
  }
  for (int i = 0; i < 3; ++i) {
    out[9 + i] = static_cast<float>(v[i]);
    out[12 + i] = static_cast<float>(w[i]);
  }
}

void PolicyConfig::validate() const {
  const int convs = static_cast<int>(temporal_channels.size());
  if (convs < 1) throw std::invalid_argument("policy: temporal_channels must not be empty");
  for (int l : {ref_len, state_len, visual_len}) {
    if (l < convs + 1) {
      throw std::invalid_argument("policy: window lengths must exceed the number of temporal convolutions");
    }
  }
  if (attention_features < 1 || pointnet_units < 1) throw std::invalid_argument("policy: feature widths must be positive");
  if (image_width < 16 || image_height < 16) throw std::invalid_argument("policy: image input below 16x16");
  if (head.empty() || image_channels.empty()) throw std::invalid_argument("policy: empty layer list");
  for (int c : temporal_channels) if (c < 1) throw std::invalid_argument("policy: channel counts must be positive");
  for (int c : head) if (c < 1) throw std::invalid_argument("policy: channel counts must be positive");
  for (int c : image_channels) if (c < 1) throw std::invalid_argument("policy: channel counts must be positive");
}

int PolicyConfig::visual_sample_size() const {
  switch (modality) {
    case Modality::Attention: return attention_features;
    case Modality::Tracks: return tracks::FeatureTrackSet::kCount * tracks::FeatureTrackSet::kDims;
    case Modality::Image: return 3 * image_width * image_height;
  }
  return 0;
}

bool ObservationBundle::finite() const {
  for (const auto* v : {&reference, &state, &visual}) {
    for (float x : *v) if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace {

void check_bundle(const PolicyConfig& cfg, const ObservationBundle& o) {
  auto fail = [](const char* branch, std::size_t got, std::size_t want) {
    throw std::invalid_argument(std::string("policy: ") + branch + " branch expects " + std::to_string(want) +
                                " values, got " + std::to_string(got));
  };
  const auto ref = static_cast<std::size_t>(cfg.ref_len) * kSampleDims;
  const auto st = static_cast<std::size_t>(cfg.state_len) * kSampleDims;
  const auto vis = static_cast<std::size_t>(cfg.visual_len) * cfg.visual_sample_size();
  if (o.reference.size() != ref) fail("reference", o.reference.size(), ref);
  if (o.state.size() != st) fail("state", o.state.size(), st);
  if (o.visual.size() != vis) fail("visual", o.visual.size(), vis);
}

// Time-major (L, D) window into channel-major (D, L).
template <class T>
void transpose_window(const float* in, int len, int dims, T* out) {
  for (int l = 0; l < len; ++l) {
    for (int d = 0; d < dims; ++d) out[d * len + l] = static_cast<T>(in[l * dims + d]);
  }
}

// (N * L, D) per-step features into (N, D, L) sequences, and back.
template <class T>
Tensor<T> steps_to_sequence(const Tensor<T>& x, int n, int len) {
  const int d = static_cast<int>(x.stride0());
  Tensor<T> out({n, d, len});
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < len; ++l) {
      const T* src = x.ptr() + (static_cast<std::size_t>(i) * len + l) * d;
      for (int k = 0; k < d; ++k) out[(static_cast<std::size_t>(i) * d + k) * len + l] = src[k];
    }
  }
  return out;
}

template <class T>
Tensor<T> sequence_to_steps(const Tensor<T>& g, Shape step_shape) {
  const int n = g.dim(0), d = g.dim(1), len = g.dim(2);
  step_shape[0] = n * len;
  Tensor<T> out(step_shape);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < len; ++l) {
      T* dst = out.ptr() + (static_cast<std::size_t>(i) * len + l) * d;
      for (int k = 0; k < d; ++k) dst[k] = g[(static_cast<std::size_t>(i) * d + k) * len + l];
    }
  }
  return out;
}

template <class T>
void add_temporal(nn::Sequential<T>& s, int in, const std::vector<int>& channels) {
  int c = in;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    s.template emplace<nn::Conv1d<T>>("conv" + std::to_string(i + 1), c, channels[i], 2);
    s.template emplace<nn::ReLU<T>>("relu" + std::to_string(i + 1));
    c = channels[i];
  }
  s.template emplace<nn::PoolLength<T>>("mean", nn::PoolLength<T>::Mode::Mean);
}

void check_shape(const char* branch, const Shape& got, const Shape& want) {
  if (got != want) {
    throw std::invalid_argument(std::string("policy: ") + branch + " branch expects " + nn::shape_str(want) +
                                ", got " + nn::shape_str(got));
  }
}

}  // namespace

template <class T>
PolicyBatch<T> make_batch(const PolicyConfig& cfg, std::span<const ObservationBundle* const> obs) {
  if (obs.empty()) throw std::invalid_argument("policy: empty batch");
  const int n = static_cast<int>(obs.size());
  const int lv = cfg.visual_len, f = cfg.visual_sample_size();
  PolicyBatch<T> b;
  b.size = n;
  b.reference = Tensor<T>({n, kSampleDims, cfg.ref_len});
  b.state = Tensor<T>({n, kSampleDims, cfg.state_len});
  switch (cfg.modality) {
    case Modality::Attention: b.visual = Tensor<T>({n, f, lv}); break;
    case Modality::Tracks:
      b.visual = Tensor<T>({n * lv, tracks::FeatureTrackSet::kDims, tracks::FeatureTrackSet::kCount});
      break;
    case Modality::Image: b.visual = Tensor<T>({n * lv, 3, cfg.image_height, cfg.image_width}); break;
  }
  for (int i = 0; i < n; ++i) {
    const ObservationBundle& o = *obs[i];
    check_bundle(cfg, o);
    transpose_window(o.reference.data(), cfg.ref_len, kSampleDims, b.reference.ptr() + b.reference.stride0() * i);
    transpose_window(o.state.data(), cfg.state_len, kSampleDims, b.state.ptr() + b.state.stride0() * i);
    switch (cfg.modality) {
      case Modality::Attention:
        transpose_window(o.visual.data(), lv, f, b.visual.ptr() + b.visual.stride0() * i);
        break;
      case Modality::Tracks:
        for (int l = 0; l < lv; ++l) {
          transpose_window(o.visual.data() + static_cast<std::size_t>(l) * f, tracks::FeatureTrackSet::kCount,
                           tracks::FeatureTrackSet::kDims,
                           b.visual.ptr() + b.visual.stride0() * (static_cast<std::size_t>(i) * lv + l));
        }
        break;
      case Modality::Image: {
        T* dst = b.visual.ptr() + b.visual.stride0() * static_cast<std::size_t>(i) * lv;
        for (std::size_t k = 0; k < o.visual.size(); ++k) dst[k] = static_cast<T>(o.visual[k]);
        break;
      }
    }
  }
  return b;
}

Eigen::Vector4d CommandScale::normalize(const Command& u) const {
  return {(u.c - g) / g, u.rates.x() / w_max, u.rates.y() / w_max, u.rates.z() / w_max};
}

Command CommandScale::denormalize(const Eigen::Vector4d& y) const {
  return {g + g * y[0], y.tail<3>() * w_max};
}

template <class T>
PolicyModel<T>::PolicyModel(PolicyConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  add_temporal(ref_branch_, kSampleDims, cfg_.temporal_channels);
  add_temporal(state_branch_, kSampleDims, cfg_.temporal_channels);
  switch (cfg_.modality) {
    case Modality::Attention: visual_width_ = cfg_.attention_features; break;
    case Modality::Tracks:
      visual_pre_.template emplace<nn::Conv1d<T>>("point1", tracks::FeatureTrackSet::kDims, cfg_.pointnet_units, 1);
      visual_pre_.template emplace<nn::ReLU<T>>("relu1");
      visual_pre_.template emplace<nn::Conv1d<T>>("point2", cfg_.pointnet_units, cfg_.pointnet_units, 1);
      visual_pre_.template emplace<nn::ReLU<T>>("relu2");
      visual_pre_.template emplace<nn::PoolLength<T>>("max", nn::PoolLength<T>::Mode::Max);
      visual_width_ = cfg_.pointnet_units;
      break;
    case Modality::Image: {
      int c = 3;
      for (std::size_t i = 0; i < cfg_.image_channels.size(); ++i) {
        visual_pre_.template emplace<nn::Conv2d<T>>("conv" + std::to_string(i + 1), c, cfg_.image_channels[i], 3, 2, 1);
        visual_pre_.template emplace<nn::ReLU<T>>("relu" + std::to_string(i + 1));
        c = cfg_.image_channels[i];
      }
      visual_pre_.template emplace<nn::Flatten<T>>("flatten");
      visual_width_ = visual_pre_.output_shape({1, 3, cfg_.image_height, cfg_.image_width})[1];
      break;
    }
  }
  add_temporal(visual_branch_, visual_width_, cfg_.temporal_channels);
  int in = 3 * cfg_.temporal_channels.back();
  for (std::size_t i = 0; i < cfg_.head.size(); ++i) {
    head_.template emplace<nn::Linear<T>>("fc" + std::to_string(i + 1), in, cfg_.head[i]);
    head_.template emplace<nn::ReLU<T>>("relu" + std::to_string(i + 1));
    in = cfg_.head[i];
  }
  head_.template emplace<nn::Linear<T>>("out", in, 4);

  Rng rng(derive_seed(seed, {0x504f4c}));
  ref_branch_.init(rng);
  state_branch_.init(rng);
  visual_pre_.init(rng);
  visual_branch_.init(rng);
  head_.init(rng);
}

template <class T>
Tensor<T> PolicyModel<T>::forward(const PolicyBatch<T>& b, bool train) {
  const int n = b.size;
  check_shape("reference", b.reference.shape, {n, kSampleDims, cfg_.ref_len});
  check_shape("state", b.state.shape, {n, kSampleDims, cfg_.state_len});
  const int lv = cfg_.visual_len;
  switch (cfg_.modality) {
    case Modality::Attention: check_shape("visual", b.visual.shape, {n, cfg_.attention_features, lv}); break;
    case Modality::Tracks:
      check_shape("visual", b.visual.shape,
                  {n * lv, tracks::FeatureTrackSet::kDims, tracks::FeatureTrackSet::kCount});
      break;
    case Modality::Image:
      check_shape("visual", b.visual.shape, {n * lv, 3, cfg_.image_height, cfg_.image_width});
      break;
  }
  DenormalGuard ftz;
  batch_ = n;
  const Tensor<T> r = ref_branch_.forward(b.reference, train);
  const Tensor<T> s = state_branch_.forward(b.state, train);
  const Tensor<T> seq =
      cfg_.modality == Modality::Attention ? b.visual : steps_to_sequence(visual_pre_.forward(b.visual, train), n, lv);
  const Tensor<T> v = visual_branch_.forward(seq, train);

  const int c = cfg_.temporal_channels.back();
  Tensor<T> cat({n, 3 * c});
  for (int i = 0; i < n; ++i) {
    T* dst = cat.ptr() + static_cast<std::size_t>(i) * 3 * c;
    std::copy_n(r.ptr() + static_cast<std::size_t>(i) * c, c, dst);
    std::copy_n(s.ptr() + static_cast<std::size_t>(i) * c, c, dst + c);
    std::copy_n(v.ptr() + static_cast<std::size_t>(i) * c, c, dst + 2 * c);
  }
  return head_.forward(cat, train);
}

template <class T>
PolicyBatch<T> PolicyModel<T>::backward(const Tensor<T>& grad_out) {
  DenormalGuard ftz;
  const int n = batch_, c = cfg_.temporal_channels.back();
  const Tensor<T> gcat = head_.backward(grad_out);
  Tensor<T> gr({n, c}), gs({n, c}), gv({n, c});
  for (int i = 0; i < n; ++i) {
    const T* src = gcat.ptr() + static_cast<std::size_t>(i) * 3 * c;
    std::copy_n(src, c, gr.ptr() + static_cast<std::size_t>(i) * c);
    std::copy_n(src + c, c, gs.ptr() + static_cast<std::size_t>(i) * c);
    std::copy_n(src + 2 * c, c, gv.ptr() + static_cast<std::size_t>(i) * c);
  }
  PolicyBatch<T> g;
  g.size = n;
  g.reference = ref_branch_.backward(gr);
  g.state = state_branch_.backward(gs);
  Tensor<T> gseq = visual_branch_.backward(gv);
  if (cfg_.modality == Modality::Attention) {
    g.visual = std::move(gseq);
  } else {
    g.visual = visual_pre_.backward(sequence_to_steps(gseq, {0, visual_width_}));
  }
  return g;
}

template <class T>
Eigen::Vector4d PolicyModel<T>::predict(const ObservationBundle& obs) {
  const ObservationBundle* p = &obs;
  const Tensor<T> y = forward(make_batch<T>(cfg_, std::span<const ObservationBundle* const>(&p, 1)), false);
  return {static_cast<double>(y[0]), static_cast<double>(y[1]), static_cast<double>(y[2]),
          static_cast<double>(y[3])};
}

template <class T>
std::vector<nn::Param<T>*> PolicyModel<T>::params() {
  std::vector<nn::Param<T>*> out;
  ref_branch_.collect("reference.", out);
  state_branch_.collect("state.", out);
  visual_pre_.collect("visual_pre.", out);
  visual_branch_.collect("visual.", out);
  head_.collect("head.", out);
  return out;
}

template <class T>
std::string PolicyModel<T>::tag() const {
  return "policy-" + std::string(to_string(cfg_.modality));
}

template <class T>
std::string PolicyModel<T>::save() {
  return nn::save_params<T>(tag(), params());
}

template <class T>
void PolicyModel<T>::load(const std::string& bytes) {
  nn::load_params<T>(bytes, tag(), params());
}

template class PolicyModel<float>;
template class PolicyModel<double>;
template PolicyBatch<float> make_batch<float>(const PolicyConfig&, std::span<const ObservationBundle* const>);
template PolicyBatch<double> make_batch<double>(const PolicyConfig&, std::span<const ObservationBundle* const>);

Command forward_policy(Policy& model, const ObservationBundle& obs, const CommandScale& scale) {
  return scale.denormalize(model.predict(obs));
}

ActResult act(Policy& model, const ObservationBundle& obs, const QuadParams& params) {
  const Command raw = forward_policy(model, obs, CommandScale{params.g, params.w_max});
  const ClampedCommand c = clamp_command(raw, params);
  return {c.command, c.non_finite};
}

}  // namespace gazeracer::policy
