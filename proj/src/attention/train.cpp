#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "gazeracer/attention/net.hpp"
#include "gazeracer/nn/adam.hpp"
#include "gazeracer/util/fpenv.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer::attention {

using nn::Tensor;

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

double luma(const std::uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

void scale_pixels(Frame& f, double factor) {
  for (auto& v : f.pixels) v = to_byte(v * factor);
}

void blend_mean(Frame& f, double factor) {
  double mean = 0.0;
  const std::size_t n = f.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) mean += luma(&f.pixels[3 * i]);
  mean /= static_cast<double>(n);
  for (auto& v : f.pixels) v = to_byte(mean + factor * (v - mean));
}

void blend_gray(Frame& f, double factor) {
  const std::size_t n = f.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t* p = &f.pixels[3 * i];
    const double y = luma(p);
    for (int c = 0; c < 3; ++c) p[c] = to_byte(y + factor * (p[c] - y));
  }
}

// Rotation of the chroma plane in YIQ space by `turns` of a full circle.
void rotate_hue(Frame& f, double turns) {
  const double a = 2.0 * M_PI * turns, ca = std::cos(a), sa = std::sin(a);
  const std::size_t n = f.pixels.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t* p = &f.pixels[3 * i];
    const double r = p[0], g = p[1], b = p[2];
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double ii = 0.596 * r - 0.274 * g - 0.322 * b;
    const double q = 0.211 * r - 0.523 * g + 0.312 * b;
    const double i2 = ca * ii - sa * q, q2 = sa * ii + ca * q;
    p[0] = to_byte(y + 0.956 * i2 + 0.621 * q2);
    p[1] = to_byte(y - 0.272 * i2 - 0.647 * q2);
    p[2] = to_byte(y - 1.106 * i2 + 1.703 * q2);
  }
}

void add_noise(Frame& f, double sigma, Rng& rng) {
  for (auto& v : f.pixels) v = to_byte(v + sigma * normal01(rng));
}

void gaussian_blur(Frame& f, double sigma) {
  const int r = static_cast<int>(std::ceil(2.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  const int w = f.width, h = f.height;
  std::vector<double> tmp(f.pixels.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * f.at(std::clamp(x + i, 0, w - 1), y)[c];
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          acc += k[i + r] * tmp[(static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x) * 3 + c];
        }
        f.at(x, y)[c] = to_byte(acc);
      }
    }
  }
}

void erase_region(Frame& f, Rng& rng) {
  const double area = uniform(rng, 0.05, 0.20) * f.width * f.height;
  const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
  const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, f.width);
  const int h = std::clamp(static_cast<int>(std::lround(area / w)), 1, f.height);
  const int x0 = static_cast<int>(uniform_index(rng, f.width - w + 1));
  const int y0 = static_cast<int>(uniform_index(rng, f.height - h + 1));
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) std::fill(f.at(x, y), f.at(x, y) + 3, std::uint8_t{128});
  }
}

}  // namespace

Frame augment(const Frame& frame, std::uint64_t seed, const AugmentConfig& cfg) {
  Frame f = frame;
  Rng rng(seed);
  if (uniform01(rng) < cfg.brightness) scale_pixels(f, uniform(rng, 0.7, 1.3));
  if (uniform01(rng) < cfg.contrast) blend_mean(f, uniform(rng, 0.7, 1.3));
  if (uniform01(rng) < cfg.saturation) blend_gray(f, uniform(rng, 0.7, 1.3));
  if (uniform01(rng) < cfg.hue) rotate_hue(f, uniform(rng, -0.05, 0.05));
  if (uniform01(rng) < cfg.noise) add_noise(f, uniform(rng, 2.0, 10.0), rng);
  if (uniform01(rng) < cfg.blur) gaussian_blur(f, uniform(rng, 0.5, 1.5));
  if (uniform01(rng) < cfg.erase) erase_region(f, rng);
  return f;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

void AttentionDataset::validate() const {
  if (maps.size() != frames.size() || lap.size() != frames.size()) {
    throw std::invalid_argument("attention dataset: frames, maps and laps differ in count");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (maps[i].width != frames[i].width || maps[i].height != frames[i].height) {
      throw std::invalid_argument("attention dataset: map " + std::to_string(i) +
                                  " does not match its frame size");
    }
    if (i > 0 && lap[i] < lap[i - 1]) throw std::invalid_argument("attention dataset: laps not ascending");
  }
}

std::vector<std::size_t> AttentionDataset::lap_starts() const {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < lap.size(); ++i) {
    if (i == 0 || lap[i] != lap[i - 1]) starts.push_back(i);
  }
  return starts;
}

AttentionDataset AttentionDataset::laps(int lap_lo, int lap_hi) const {
  AttentionDataset out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (lap[i] >= lap_lo && lap[i] < lap_hi) {
      out.frames.push_back(frames[i]);
      out.maps.push_back(maps[i]);
      out.lap.push_back(lap[i]);
    }
  }
  return out;
}

void split_dataset(const AttentionDataset& all, double val_fraction, AttentionDataset& train,
                   AttentionDataset& val) {
  all.validate();
  std::vector<int> ids(all.lap);
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw std::invalid_argument("split_dataset: need at least two laps");
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(ids.size()))), 1,
      ids.size() - 1);
  const int cut = ids[ids.size() - n_val];
  train = all.laps(ids.front(), cut);
  val = all.laps(cut, ids.back() + 1);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainAttentionConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train-attention: epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("train-attention: batch must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train-attention: lr must be positive");
}

std::vector<AttentionMap> predict_all(AttentionNet& net, const std::vector<Frame>& frames, int batch) {
  std::vector<AttentionMap> out;
  out.reserve(frames.size());
  std::vector<const Frame*> ptrs;
  for (std::size_t i = 0; i < frames.size(); i += batch) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(frames.size(), i + batch); ++j) ptrs.push_back(&frames[j]);
    auto maps = net.predict(ptrs);
    std::move(maps.begin(), maps.end(), std::back_inserter(out));
  }
  return out;
}

TrainAttentionResult train_attention(AttentionNet& net, const AttentionDataset& train,
                                     const AttentionDataset* val, const TrainAttentionConfig& cfg,
                                     std::uint64_t seed,
                                     const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("train-attention: empty dataset");
  const auto& nc = net.config();
  if (train.frames[0].width != nc.width || train.frames[0].height != nc.height) {
    throw std::invalid_argument("train-attention: dataset resolution does not match the network");
  }

  DenormalGuard ftz;
  const auto params = net.params();
  nn::Adam<float> adam(params, nn::AdamConfig{.lr = cfg.lr});
  Rng order_rng(derive_seed(seed, {0x4f52, 0}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainAttentionResult result;
  const std::size_t plane = static_cast<std::size_t>(nc.width) * nc.height;
  std::vector<Frame> aug;
  std::vector<const Frame*> ptrs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const int n = static_cast<int>(end - start);
      ptrs.clear();
      aug.clear();
      aug.reserve(n);
      Tensor<float> target({n, 1, nc.height, nc.width});
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        if (cfg.augment) {
          aug.push_back(augment(train.frames[idx], derive_seed(seed, {0x4155, std::uint64_t(epoch), idx}),
                                cfg.augmentation));
          ptrs.push_back(&aug.back());
        } else {
          ptrs.push_back(&train.frames[idx]);
        }
        const auto& m = train.maps[idx].values;
        std::copy(m.begin(), m.end(), target.ptr() + (j - start) * plane);
      }
      nn::zero_grad(params);
      const Tensor<float> logits = net.logits(frames_to_tensor(ptrs), true);
      Tensor<float> grad;
      const double loss = nn::kl_loss_from_logits(logits, target, &grad);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train-attention: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));
      }
      net.backward(grad);
      adam.step();
      loss_sum += loss;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_kl = loss_sum / batches;
    if (val != nullptr && val->size() > 0) {
      log.val = summarize_metrics(val->maps, predict_all(net, val->frames));
    }
    result.final_loss = log.train_kl;
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace gazeracer::attention
