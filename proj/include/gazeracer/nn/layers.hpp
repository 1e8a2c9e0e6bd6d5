#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gazeracer/nn/tensor.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer::nn {

/// When enabled, Sequential verifies every intermediate value and gradient is
/// finite and names the offending layer otherwise.
void set_checked(bool on);
bool checked();

/// Layer with cached forward state. backward() consumes the cache of the most
/// recent forward(), accumulates parameter gradients and returns the input
/// gradient.
template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect(const std::string& /*prefix*/, std::vector<Param<T>*>& /*out*/) {}
  /// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
  virtual void init(Rng& /*rng*/) {}
};

template <class T>
using LayerPtr = std::unique_ptr<Layer<T>>;

template <class T>
class Linear final : public Layer<T> {
 public:
  Linear(int in, int out, bool bias = true);
  std::string kind() const override { return "linear"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;
  void collect(const std::string& prefix, std::vector<Param<T>*>& out) override;
  void init(Rng& rng) override;

  Param<T> weight;  // [out, in]
  Param<T> bias;    // [out]

 private:
  int in_, out_;
  bool has_bias_;
  Tensor<T> x_;
};

struct KernelSize {
  int h, w;
};

/// 2-D convolution (cross-correlation) over (N, C, H, W) via im2col + GEMM.
template <class T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int cin, int cout, KernelSize k, int stride, int pad, bool bias);
  Conv2d(int cin, int cout, int k, int stride = 1, int pad = 0, bool bias = true)
      : Conv2d(cin, cout, KernelSize{k, k}, stride, pad, bias) {}
  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;
  void collect(const std::string& prefix, std::vector<Param<T>*>& out) override;
  void init(Rng& rng) override;

  Param<T> weight;  // [cout, cin, kh, kw]
  Param<T> bias;    // [cout]

 protected:
  int cin_, cout_, kh_, kw_, stride_, pad_;
  bool has_bias_;
  Tensor<T> x_;
};

/// 1-D convolution over (N, C, L); stride 1, no padding.
template <class T>
class Conv1d final : public Conv2d<T> {
 public:
  Conv1d(int cin, int cout, int k, bool bias = true) : Conv2d<T>(cin, cout, KernelSize{1, k}, 1, 0, bias) {}
  std::string kind() const override { return "conv1d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;
};

/// Per-channel normalization over (N, H, W). Training uses batch statistics
/// and updates the running ones with momentum 0.1.
template <class T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);
  std::string kind() const override { return "batchnorm2d"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;
  void collect(const std::string& prefix, std::vector<Param<T>*>& out) override;
  void init(Rng& rng) override;

  Param<T> gamma, beta;
  Param<T> running_mean, running_var;

 private:
  void reset();
  int c_;
  double eps_, momentum_;
  bool train_ = false;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <class T>
class ReLU final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  Tensor<T> y_;
};

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  explicit MaxPool2d(int k = 2) : k_(k) {}
  std::string kind() const override { return "maxpool2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  int k_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Nearest-neighbour resize of (N, C, H, W) to a fixed (h, w); source index
/// floor(i * H / h).
template <class T>
class UpsampleNearest final : public Layer<T> {
 public:
  UpsampleNearest(int h, int w) : h_(h), w_(w) {}
  std::string kind() const override { return "upsample-nearest"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  int h_, w_;
  Shape in_shape_;
};

/// Softmax over all non-batch elements of each sample.
template <class T>
class SoftmaxSpatial final : public Layer<T> {
 public:
  std::string kind() const override { return "softmax-spatial"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  Tensor<T> y_;
};

/// (N, C, H, W) -> (N, H*W), mean over channels.
template <class T>
class ChannelMean final : public Layer<T> {
 public:
  std::string kind() const override { return "channel-mean"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  Shape in_shape_;
};

/// (N, C, L) -> (N, C), mean or max over L.
template <class T>
class PoolLength final : public Layer<T> {
 public:
  enum class Mode { Mean, Max };
  explicit PoolLength(Mode mode) : mode_(mode) {}
  std::string kind() const override { return mode_ == Mode::Mean ? "mean-length" : "max-length"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  Mode mode_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// (N, ...) -> (N, F).
template <class T>
class Flatten final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;

 private:
  Shape in_shape_;
};

/// Named chain of layers.
template <class T>
class Sequential final : public Layer<T> {
 public:
  Sequential& add(std::string name, LayerPtr<T> layer);
  template <class L, class... Args>
  L& emplace(std::string name, Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    add(std::move(name), std::move(p));
    return ref;
  }
  std::string kind() const override { return "sequential"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;
  void collect(const std::string& prefix, std::vector<Param<T>*>& out) override;
  void init(Rng& rng) override;

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_[i].second; }
  const std::string& name(std::size_t i) const { return layers_[i].first; }

 private:
  std::vector<std::pair<std::string, LayerPtr<T>>> layers_;
};

/// Two 3x3 conv + batch-norm layers with an identity or 1x1-projection skip:
/// relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x)).
template <class T>
class ResBlock final : public Layer<T> {
 public:
  ResBlock(int cin, int cout, int stride);
  std::string kind() const override { return "resblock"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, bool train) override;
  Tensor<T> backward(const Tensor<T>& gy) override;
  void collect(const std::string& prefix, std::vector<Param<T>*>& out) override;
  void init(Rng& rng) override;

 private:
  Sequential<T> main_;
  Sequential<T> skip_;  // empty for identity
  Tensor<T> y_;
};

/// Collects all parameters of a layer tree in a stable order.
template <class T>
std::vector<Param<T>*> parameters(Layer<T>& root, const std::string& prefix = "");

template <class T>
void zero_grad(const std::vector<Param<T>*>& params);

/// Mean over the batch of KL(target || softmax(logits)) with the softmax taken
/// over each sample's non-batch elements. Writes d loss / d logits to grad.
template <class T>
double kl_loss_from_logits(const Tensor<T>& logits, const Tensor<T>& target, Tensor<T>* grad);

/// Mean squared error over all elements; writes the gradient if requested.
template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad);

/// Row-major GEMM on the active SIMD kernels (float) or the scalar loop
/// (double): C (+)= A * B.
template <class T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate);

}  // namespace gazeracer::nn
