#include "gazeracer/attention/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gazeracer/nn/weights.hpp"
#include "gazeracer/util/fpenv.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer::attention {

using nn::Shape;
using nn::Tensor;

void AttentionNetConfig::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("attention-net: resolution below 16x16");
  if (base_channels < 1) throw std::invalid_argument("attention-net: base_channels must be positive");
}

namespace {

// Stem conv keeps the size, max-pool floors, each stride-2 block ceils.
int encoded(int n) {
  n /= 2;
  for (int i = 0; i < 3; ++i) n = (n + 1) / 2;
  return n;
}

}  // namespace

int AttentionNetConfig::feature_width() const { return encoded(width); }
int AttentionNetConfig::feature_height() const { return encoded(height); }

Tensor<float> frames_to_tensor(std::span<const Frame* const> frames) {
  if (frames.empty()) throw std::invalid_argument("frames_to_tensor: no frames");
  const int w = frames[0]->width, h = frames[0]->height;
  Tensor<float> t({static_cast<int>(frames.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const Frame& f = *frames[n];
    if (f.width != w || f.height != h || !f.valid()) {
      throw std::invalid_argument("frames_to_tensor: frame size mismatch");
    }
    float* out = t.ptr() + n * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      for (int c = 0; c < 3; ++c) out[c * plane + i] = f.pixels[3 * i + c] * (1.0f / 127.5f) - 1.0f;
    }
  }
  return t;
}

Tensor<float> frame_to_tensor(const Frame& frame) {
  const Frame* p = &frame;
  return frames_to_tensor(std::span<const Frame* const>(&p, 1));
}

template <class T>
AttentionModel<T>::AttentionModel(AttentionNetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const int b = cfg_.base_channels;
  encoder_.template emplace<nn::Conv2d<T>>("stem.conv", 3, b, 3, 1, 1, false);
  encoder_.template emplace<nn::BatchNorm2d<T>>("stem.bn", b);
  encoder_.template emplace<nn::ReLU<T>>("stem.relu");
  encoder_.template emplace<nn::MaxPool2d<T>>("stem.pool", 2);
  encoder_.template emplace<nn::ResBlock<T>>("block1", b, b, 1);
  encoder_.template emplace<nn::ResBlock<T>>("block2", b, 2 * b, 2);
  encoder_.template emplace<nn::ResBlock<T>>("block3", 2 * b, 4 * b, 2);
  encoder_.template emplace<nn::ResBlock<T>>("block4", 4 * b, 8 * b, 2);

  // Resolutions of block3, block2 and block1 outputs to upsample back through.
  Shape s{1, 3, cfg_.height, cfg_.width};
  std::vector<Shape> sizes;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    s = encoder_.at(i).output_shape(s);
    sizes.push_back(s);
  }
  const Shape& r1 = sizes[4];
  const Shape& r2 = sizes[5];
  const Shape& r3 = sizes[6];
  decoder_.template emplace<nn::UpsampleNearest<T>>("up3", r3[2], r3[3]);
  decoder_.template emplace<nn::Conv2d<T>>("conv3", 8 * b, 4 * b, 3, 1, 1, true);
  decoder_.template emplace<nn::ReLU<T>>("relu3");
  decoder_.template emplace<nn::UpsampleNearest<T>>("up2", r2[2], r2[3]);
  decoder_.template emplace<nn::Conv2d<T>>("conv2", 4 * b, 2 * b, 3, 1, 1, true);
  decoder_.template emplace<nn::ReLU<T>>("relu2");
  decoder_.template emplace<nn::UpsampleNearest<T>>("up1", r1[2], r1[3]);
  decoder_.template emplace<nn::Conv2d<T>>("conv1", 2 * b, b, 3, 1, 1, true);
  decoder_.template emplace<nn::ReLU<T>>("relu1");
  // A pointwise conv commutes with nearest upsampling, so it runs at the
  // smaller resolution.
  decoder_.template emplace<nn::Conv2d<T>>("score", b, 1, 1, 1, 0, true);
  decoder_.template emplace<nn::UpsampleNearest<T>>("up0", cfg_.height, cfg_.width);

  Rng rng(derive_seed(seed, {0x4154544e}));
  encoder_.init(rng);
  decoder_.init(rng);
}

template <class T>
void AttentionModel<T>::check_input(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.height ||
      images.dim(3) != cfg_.width) {
    throw std::invalid_argument("attention-net: expected (N, 3, " + std::to_string(cfg_.height) +
                                ", " + std::to_string(cfg_.width) + ") input, got " +
                                nn::shape_str(images.shape));
  }
}

template <class T>
Tensor<T> AttentionModel<T>::logits(const Tensor<T>& images, bool train) {
  check_input(images);
  DenormalGuard ftz;
  return decoder_.forward(encoder_.forward(images, train), train);
}

template <class T>
Tensor<T> AttentionModel<T>::backward(const Tensor<T>& grad_logits) {
  DenormalGuard ftz;
  return encoder_.backward(decoder_.backward(grad_logits));
}

template <class T>
Tensor<T> AttentionModel<T>::features(const Tensor<T>& images) {
  check_input(images);
  DenormalGuard ftz;
  return pool_.forward(encoder_.forward(images, false), false);
}

namespace {

AttentionMap softmax_map(const double* x, int w, int h) {
  AttentionMap m(w, h);
  const std::size_t n = m.values.size();
  const double mx = *std::max_element(x, x + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.values[i] = std::exp(x[i] - mx);
    s += m.values[i];
  }
  for (double& v : m.values) v /= s;
  return m;
}

}  // namespace

template <class T>
std::vector<AttentionMap> AttentionModel<T>::predict(std::span<const Frame* const> frames) {
  const Tensor<T> x = nn::cast<T>(frames_to_tensor(frames));
  const Tensor<T> y = logits(x, false);
  const std::size_t m = y.stride0();
  std::vector<double> buf(m);
  std::vector<AttentionMap> out;
  out.reserve(frames.size());
  for (int n = 0; n < y.dim(0); ++n) {
    std::copy(y.ptr() + n * m, y.ptr() + (n + 1) * m, buf.begin());
    out.push_back(softmax_map(buf.data(), cfg_.width, cfg_.height));
  }
  return out;
}

template <class T>
AttentionMap AttentionModel<T>::predict(const Frame& frame) {
  const Frame* p = &frame;
  return predict(std::span<const Frame* const>(&p, 1)).front();
}

template <class T>
std::vector<float> AttentionModel<T>::encoder_features(const Frame& frame) {
  const Tensor<T> f = features(nn::cast<T>(frame_to_tensor(frame)));
  return std::vector<float>(f.data.begin(), f.data.end());
}

template <class T>
std::vector<nn::Param<T>*> AttentionModel<T>::params() {
  std::vector<nn::Param<T>*> out;
  encoder_.collect("encoder.", out);
  decoder_.collect("decoder.", out);
  return out;
}

template <class T>
std::string AttentionModel<T>::save() {
  return nn::save_params<T>(kWeightsTag, params());
}

template <class T>
void AttentionModel<T>::load(const std::string& bytes) {
  nn::load_params<T>(bytes, kWeightsTag, params());
}

template class AttentionModel<float>;
template class AttentionModel<double>;

}  // namespace gazeracer::attention
