#include "gazeracer/nn/layers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

#include "gazeracer/simd/kernels.hpp"

namespace gazeracer::nn {

namespace {

std::atomic<bool> g_checked{false};

void require_rank(const Shape& s, std::size_t rank, const char* layer) {
  if (s.size() != rank) {
    throw std::invalid_argument(std::string(layer) + ": expected rank " + std::to_string(rank) +
                                " input, got " + shape_str(s));
  }
}

template <class T>
void transpose(const T* src, int rows, int cols, T* dst) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
  }
}

template <class T>
void he_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data) v = static_cast<T>(sd * normal01(rng));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
bool Tensor<T>::finite() const {
  for (T v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void set_checked(bool on) { g_checked = on; }
bool checked() { return g_checked; }

template <class T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
          bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    simd::kernels().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<std::size_t>(i) * ldc;
      if (!accumulate) std::fill(crow, crow + n, T(0));
      const T* arow = a + static_cast<std::size_t>(i) * lda;
      for (int p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + static_cast<std::size_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <class T>
Linear<T>::Linear(int in, int out, bool bias)
    : weight("weight", {out, in}), bias("bias", {out}), in_(in), out_(out), has_bias_(bias) {}

template <class T>
Shape Linear<T>::output_shape(const Shape& in) const {
  require_rank(in, 2, "linear");
  if (in[1] != in_) {
    throw std::invalid_argument("linear: expected " + std::to_string(in_) + " features, got " +
                                shape_str(in));
  }
  return {in[0], out_};
}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool) {
  Tensor<T> y(output_shape(x.shape));
  const int n = x.dim(0);
  std::vector<T> wt(static_cast<std::size_t>(in_) * out_);
  transpose(weight.value.ptr(), out_, in_, wt.data());
  gemm<T>(n, out_, in_, x.ptr(), in_, wt.data(), out_, y.ptr(), out_, false);
  if (has_bias_) {
    for (int i = 0; i < n; ++i) {
      T* row = y.ptr() + static_cast<std::size_t>(i) * out_;
      for (int j = 0; j < out_; ++j) row[j] += bias.value[j];
    }
  }
  x_ = x;
  return y;
}

template <class T>
Tensor<T> Linear<T>::backward(const Tensor<T>& gy) {
  const int n = x_.dim(0);
  std::vector<T> gyt(static_cast<std::size_t>(n) * out_);
  transpose(gy.ptr(), n, out_, gyt.data());
  // Gradients are formed locally and added once so repeated backward calls
  // accumulate exactly.
  std::vector<T> gw(weight.grad.size());
  gemm<T>(out_, in_, n, gyt.data(), n, x_.ptr(), in_, gw.data(), in_, false);
  for (std::size_t i = 0; i < gw.size(); ++i) weight.grad[i] += gw[i];
  if (has_bias_) {
    for (int j = 0; j < out_; ++j) {
      T s = 0;
      for (int i = 0; i < n; ++i) s += gy[static_cast<std::size_t>(i) * out_ + j];
      bias.grad[j] += s;
    }
  }
  Tensor<T> gx(x_.shape);
  gemm<T>(n, in_, out_, gy.ptr(), out_, weight.value.ptr(), in_, gx.ptr(), in_, false);
  return gx;
}

template <class T>
void Linear<T>::collect(const std::string& prefix, std::vector<Param<T>*>& out) {
  weight.name = prefix + "weight";
  out.push_back(&weight);
  if (has_bias_) {
    bias.name = prefix + "bias";
    out.push_back(&bias);
  }
}

template <class T>
void Linear<T>::init(Rng& rng) {
  he_normal(weight.value, in_, rng);
  bias.value.zero();
}

// ---------------------------------------------------------------------------
// Conv2d / Conv1d
// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  int cin, h, w, kh, kw, stride, pad, ho, wo;
  int k() const { return cin * kh * kw; }
  int p() const { return ho * wo; }
  bool trivial() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int p = g.p();
  for (int c = 0; c < g.cin; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* out = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* xr = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.w) ? xr[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* x) {
  const int p = g.p();
  for (int c = 0; c < g.cin; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* xr = xc + static_cast<std::size_t>(iy) * g.w;
          const T* in = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) xr[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Conv2d<T>::Conv2d(int cin, int cout, KernelSize k, int stride, int pad, bool bias)
    : weight("weight", {cout, cin, k.h, k.w}),
      bias("bias", {cout}),
      cin_(cin),
      cout_(cout),
      kh_(k.h),
      kw_(k.w),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  if (cin <= 0 || cout <= 0 || k.h <= 0 || k.w <= 0 || stride <= 0 || pad < 0) {
    throw std::invalid_argument("conv: invalid hyperparameters");
  }
}

template <class T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, "conv2d");
  if (in[1] != cin_) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(cin_) + " channels, got " +
                                shape_str(in));
  }
  const int ho = (in[2] + 2 * pad_ - kh_) / stride_ + 1;
  const int wo = (in[3] + 2 * pad_ - kw_) / stride_ + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input " + shape_str(in) + " too small");
  return {in[0], cout_, ho, wo};
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool) {
  const Shape os = Conv2d<T>::output_shape(x.shape);
  Tensor<T> y(os);
  const ConvGeom g{cin_, x.dim(2), x.dim(3), kh_, kw_, stride_, pad_, os[2], os[3]};
  const int k = g.k(), p = g.p();
  std::vector<T> cols(g.trivial() ? 0 : static_cast<std::size_t>(k) * p);
  for (int n = 0; n < x.dim(0); ++n) {
    const T* xn = x.ptr() + n * x.stride0();
    T* yn = y.ptr() + n * y.stride0();
    const T* b = xn;
    if (!g.trivial()) {
      im2col(xn, g, cols.data());
      b = cols.data();
    }
    gemm<T>(cout_, p, k, weight.value.ptr(), k, b, p, yn, p, false);
    if (has_bias_) {
      for (int c = 0; c < cout_; ++c) {
        T* row = yn + static_cast<std::size_t>(c) * p;
        const T bv = bias.value[c];
        for (int i = 0; i < p; ++i) row[i] += bv;
      }
    }
  }
  x_ = x;
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& gy) {
  const ConvGeom g{cin_, x_.dim(2), x_.dim(3), kh_, kw_, stride_, pad_, gy.dim(2), gy.dim(3)};
  const int k = g.k(), p = g.p();
  Tensor<T> gx(x_.shape);
  std::vector<T> cols(static_cast<std::size_t>(k) * p);
  std::vector<T> colst(static_cast<std::size_t>(k) * p);
  std::vector<T> dcols(g.trivial() ? 0 : static_cast<std::size_t>(k) * p);
  std::vector<T> wt(static_cast<std::size_t>(k) * cout_);
  transpose(weight.value.ptr(), cout_, k, wt.data());
  // Local sums, added once so repeated backward calls accumulate exactly.
  std::vector<T> gw(weight.grad.size()), gb(cout_, T(0));
  for (int n = 0; n < x_.dim(0); ++n) {
    const T* xn = x_.ptr() + n * x_.stride0();
    const T* gyn = gy.ptr() + n * gy.stride0();
    T* gxn = gx.ptr() + n * gx.stride0();
    if (g.trivial()) {
      transpose(xn, k, p, colst.data());
    } else {
      im2col(xn, g, cols.data());
      transpose(cols.data(), k, p, colst.data());
    }
    gemm<T>(cout_, k, p, gyn, p, colst.data(), k, gw.data(), k, n > 0);
    if (has_bias_) {
      for (int c = 0; c < cout_; ++c) {
        const T* row = gyn + static_cast<std::size_t>(c) * p;
        T s = 0;
        for (int i = 0; i < p; ++i) s += row[i];
        gb[c] += s;
      }
    }
    if (g.trivial()) {
      gemm<T>(k, p, cout_, wt.data(), cout_, gyn, p, gxn, p, false);
    } else {
      gemm<T>(k, p, cout_, wt.data(), cout_, gyn, p, dcols.data(), p, false);
      col2im_add(dcols.data(), g, gxn);
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) weight.grad[i] += gw[i];
  if (has_bias_) {
    for (int c = 0; c < cout_; ++c) bias.grad[c] += gb[c];
  }
  return gx;
}

template <class T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<Param<T>*>& out) {
  weight.name = prefix + "weight";
  out.push_back(&weight);
  if (has_bias_) {
    bias.name = prefix + "bias";
    out.push_back(&bias);
  }
}

template <class T>
void Conv2d<T>::init(Rng& rng) {
  he_normal(weight.value, cin_ * kh_ * kw_, rng);
  bias.value.zero();
}

template <class T>
Shape Conv1d<T>::output_shape(const Shape& in) const {
  require_rank(in, 3, "conv1d");
  const Shape s = Conv2d<T>::output_shape({in[0], in[1], 1, in[2]});
  return {s[0], s[1], s[3]};
}

template <class T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x, bool train) {
  require_rank(x.shape, 3, "conv1d");
  const Tensor<T> y = Conv2d<T>::forward(x.reshaped({x.dim(0), x.dim(1), 1, x.dim(2)}), train);
  return y.reshaped({y.dim(0), y.dim(1), y.dim(3)});
}

template <class T>
Tensor<T> Conv1d<T>::backward(const Tensor<T>& gy) {
  const Tensor<T> gx = Conv2d<T>::backward(gy.reshaped({gy.dim(0), gy.dim(1), 1, gy.dim(2)}));
  return gx.reshaped({gx.dim(0), gx.dim(1), gx.dim(3)});
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

template <class T>
BatchNorm2d<T>::BatchNorm2d(int channels, double eps, double momentum)
    : gamma("gamma", {channels}),
      beta("beta", {channels}),
      running_mean("running_mean", {channels}, false),
      running_var("running_var", {channels}, false),
      c_(channels),
      eps_(eps),
      momentum_(momentum) {
  reset();
}

template <class T>
void BatchNorm2d<T>::init(Rng&) {
  reset();
}

template <class T>
void BatchNorm2d<T>::reset() {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), T(1));
  beta.value.zero();
  running_mean.value.zero();
  std::fill(running_var.value.data.begin(), running_var.value.data.end(), T(1));
}

template <class T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool train) {
  require_rank(x.shape, 4, "batchnorm2d");
  if (x.dim(1) != c_) throw std::invalid_argument("batchnorm2d: channel mismatch " + shape_str(x.shape));
  const int n = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double m = static_cast<double>(n) * hw;
  Tensor<T> y(x.shape);
  xhat_ = Tensor<T>(x.shape);
  inv_std_.assign(c_, T(0));
  train_ = train;
  for (int c = 0; c < c_; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.ptr() + i * x.stride0() + c * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      mean = s / m;
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.ptr() + i * x.stride0() + c * hw;
        for (std::size_t j = 0; j < hw; ++j) ss += (p[j] - mean) * (p[j] - mean);
      }
      var = ss / m;
      const double unbiased = m > 1 ? ss / (m - 1) : var;
      running_mean.value[c] = static_cast<T>((1 - momentum_) * running_mean.value[c] + momentum_ * mean);
      running_var.value[c] = static_cast<T>((1 - momentum_) * running_var.value[c] + momentum_ * unbiased);
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<T>(inv);
    const T g = gamma.value[c], b = beta.value[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = i * x.stride0() + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const T xh = static_cast<T>((x[off + j] - mean) * inv);
        xhat_[off + j] = xh;
        y[off + j] = g * xh + b;
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& gy) {
  const int n = gy.dim(0);
  const std::size_t hw = static_cast<std::size_t>(gy.dim(2)) * gy.dim(3);
  const double m = static_cast<double>(n) * hw;
  Tensor<T> gx(gy.shape);
  for (int c = 0; c < c_; ++c) {
    double sg = 0.0, sgx = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = i * gy.stride0() + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sg += gy[off + j];
        sgx += gy[off + j] * xhat_[off + j];
      }
    }
    gamma.grad[c] += static_cast<T>(sgx);
    beta.grad[c] += static_cast<T>(sg);
    const double g = gamma.value[c];
    const double inv = inv_std_[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = i * gy.stride0() + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        if (train_) {
          gx[off + j] = static_cast<T>(g * inv / m * (m * gy[off + j] - sg - xhat_[off + j] * sgx));
        } else {
          gx[off + j] = static_cast<T>(g * inv * gy[off + j]);
        }
      }
    }
  }
  return gx;
}

template <class T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<Param<T>*>& out) {
  gamma.name = prefix + "gamma";
  beta.name = prefix + "beta";
  running_mean.name = prefix + "running_mean";
  running_var.name = prefix + "running_var";
  out.insert(out.end(), {&gamma, &beta, &running_mean, &running_var});
}

// ---------------------------------------------------------------------------
// Elementwise and reshaping layers
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, bool) {
  Tensor<T> y(x.shape);
  if constexpr (std::is_same_v<T, float>) {
    simd::kernels().relu(x.ptr(), y.ptr(), x.size());
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : T(0);
  }
  y_ = y;
  return y;
}

template <class T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape);
  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = y_[i] > 0 ? gy[i] : T(0);
  return gx;
}

template <class T>
Shape MaxPool2d<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, "maxpool2d");
  if (in[2] < k_ || in[3] < k_) throw std::invalid_argument("maxpool2d: input " + shape_str(in) + " too small");
  return {in[0], in[1], in[2] / k_, in[3] / k_};
}

template <class T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, bool) {
  const Shape os = output_shape(x.shape);
  Tensor<T> y(os);
  argmax_.assign(y.size(), 0);
  in_shape_ = x.shape;
  const int h = x.dim(2), w = x.dim(3);
  std::size_t o = 0;
  for (int nc = 0; nc < os[0] * os[1]; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * h * w;
    for (int oy = 0; oy < os[2]; ++oy) {
      for (int ox = 0; ox < os[3]; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(oy * k_) * w + ox * k_;
        for (int dy = 0; dy < k_; ++dy) {
          for (int dx = 0; dx < k_; ++dx) {
            const std::size_t idx = base + static_cast<std::size_t>(oy * k_ + dy) * w + ox * k_ + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        argmax_[o] = best;
        y[o] = x[best];
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(in_shape_);
  for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax_[i]] += gy[i];
  return gx;
}

template <class T>
Shape UpsampleNearest<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, "upsample-nearest");
  return {in[0], in[1], h_, w_};
}

template <class T>
Tensor<T> UpsampleNearest<T>::forward(const Tensor<T>& x, bool) {
  Tensor<T> y(output_shape(x.shape));
  in_shape_ = x.shape;
  const int h = x.dim(2), w = x.dim(3);
  std::vector<int> sx(w_);
  for (int ox = 0; ox < w_; ++ox) sx[ox] = static_cast<int>(static_cast<long long>(ox) * w / w_);
  std::size_t o = 0;
  for (int nc = 0; nc < x.dim(0) * x.dim(1); ++nc) {
    const T* plane = x.ptr() + static_cast<std::size_t>(nc) * h * w;
    for (int oy = 0; oy < h_; ++oy) {
      const T* row = plane + static_cast<std::size_t>(static_cast<long long>(oy) * h / h_) * w;
      for (int ox = 0; ox < w_; ++ox) y[o++] = row[sx[ox]];
    }
  }
  return y;
}

template <class T>
Tensor<T> UpsampleNearest<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(in_shape_);
  const int h = in_shape_[2], w = in_shape_[3];
  std::size_t o = 0;
  for (int nc = 0; nc < in_shape_[0] * in_shape_[1]; ++nc) {
    T* plane = gx.ptr() + static_cast<std::size_t>(nc) * h * w;
    for (int oy = 0; oy < h_; ++oy) {
      T* row = plane + static_cast<std::size_t>(static_cast<long long>(oy) * h / h_) * w;
      for (int ox = 0; ox < w_; ++ox) row[static_cast<long long>(ox) * w / w_] += gy[o++];
    }
  }
  return gx;
}

template <class T>
Tensor<T> SoftmaxSpatial<T>::forward(const Tensor<T>& x, bool) {
  Tensor<T> y(x.shape);
  const std::size_t m = x.stride0();
  for (int n = 0; n < x.dim(0); ++n) {
    const T* xi = x.ptr() + n * m;
    T* yi = y.ptr() + n * m;
    const T mx = *std::max_element(xi, xi + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      yi[j] = static_cast<T>(std::exp(static_cast<double>(xi[j] - mx)));
      s += yi[j];
    }
    for (std::size_t j = 0; j < m; ++j) yi[j] = static_cast<T>(yi[j] / s);
  }
  y_ = y;
  return y;
}

template <class T>
Tensor<T> SoftmaxSpatial<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape);
  const std::size_t m = gy.stride0();
  for (int n = 0; n < gy.dim(0); ++n) {
    const T* y = y_.ptr() + n * m;
    const T* g = gy.ptr() + n * m;
    double dot = 0.0;
    for (std::size_t j = 0; j < m; ++j) dot += static_cast<double>(g[j]) * y[j];
    for (std::size_t j = 0; j < m; ++j) gx[n * m + j] = static_cast<T>(y[j] * (g[j] - dot));
  }
  return gx;
}

template <class T>
Shape ChannelMean<T>::output_shape(const Shape& in) const {
  require_rank(in, 4, "channel-mean");
  return {in[0], in[2] * in[3]};
}

template <class T>
Tensor<T> ChannelMean<T>::forward(const Tensor<T>& x, bool) {
  Tensor<T> y(output_shape(x.shape));
  in_shape_ = x.shape;
  const int c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n) {
    T* yn = y.ptr() + n * hw;
    for (int ch = 0; ch < c; ++ch) {
      const T* p = x.ptr() + n * x.stride0() + ch * hw;
      for (std::size_t j = 0; j < hw; ++j) yn[j] += p[j];
    }
    for (std::size_t j = 0; j < hw; ++j) yn[j] /= static_cast<T>(c);
  }
  return y;
}

template <class T>
Tensor<T> ChannelMean<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(in_shape_);
  const int c = in_shape_[1];
  const std::size_t hw = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  for (int n = 0; n < in_shape_[0]; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      T* p = gx.ptr() + n * gx.stride0() + ch * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] = gy[n * hw + j] / static_cast<T>(c);
    }
  }
  return gx;
}

template <class T>
Shape PoolLength<T>::output_shape(const Shape& in) const {
  require_rank(in, 3, "pool-length");
  return {in[0], in[1]};
}

template <class T>
Tensor<T> PoolLength<T>::forward(const Tensor<T>& x, bool) {
  Tensor<T> y(output_shape(x.shape));
  in_shape_ = x.shape;
  const int l = x.dim(2);
  argmax_.assign(y.size(), 0);
  for (std::size_t r = 0; r < y.size(); ++r) {
    const T* p = x.ptr() + r * l;
    if (mode_ == Mode::Mean) {
      T s = 0;
      for (int j = 0; j < l; ++j) s += p[j];
      y[r] = s / static_cast<T>(l);
    } else {
      const auto best = static_cast<std::size_t>(std::max_element(p, p + l) - p);
      argmax_[r] = r * l + best;
      y[r] = p[best];
    }
  }
  return y;
}

template <class T>
Tensor<T> PoolLength<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(in_shape_);
  const int l = in_shape_[2];
  for (std::size_t r = 0; r < gy.size(); ++r) {
    if (mode_ == Mode::Mean) {
      for (int j = 0; j < l; ++j) gx[r * l + j] = gy[r] / static_cast<T>(l);
    } else {
      gx[argmax_[r]] += gy[r];
    }
  }
  return gx;
}

template <class T>
Shape Flatten<T>::output_shape(const Shape& in) const {
  return {in.at(0), static_cast<int>(shape_size(in) / std::max(1, in[0]))};
}

template <class T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, bool) {
  in_shape_ = x.shape;
  return x.reshaped(output_shape(x.shape));
}

template <class T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& gy) {
  return gy.reshaped(in_shape_);
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

template <class T>
Sequential<T>& Sequential<T>::add(std::string name, LayerPtr<T> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

template <class T>
Shape Sequential<T>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& [name, layer] : layers_) s = layer->output_shape(s);
  return s;
}

template <class T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, bool train) {
  Tensor<T> h = x;
  for (auto& [name, layer] : layers_) {
    h = layer->forward(h, train);
    if (checked() && !h.finite()) {
      throw std::runtime_error("non-finite output after layer '" + name + "' (" + layer->kind() + ")");
    }
  }
  return h;
}

template <class T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& gy) {
  Tensor<T> g = gy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = it->second->backward(g);
    if (checked() && !g.finite()) {
      throw std::runtime_error("non-finite gradient at layer '" + it->first + "' (" +
                               it->second->kind() + ")");
    }
  }
  return g;
}

template <class T>
void Sequential<T>::collect(const std::string& prefix, std::vector<Param<T>*>& out) {
  for (auto& [name, layer] : layers_) layer->collect(prefix + name + ".", out);
}

template <class T>
void Sequential<T>::init(Rng& rng) {
  for (auto& [name, layer] : layers_) layer->init(rng);
}

template <class T>
ResBlock<T>::ResBlock(int cin, int cout, int stride) {
  main_.template emplace<Conv2d<T>>("conv1", cin, cout, 3, stride, 1, false);
  main_.template emplace<BatchNorm2d<T>>("bn1", cout);
  main_.template emplace<ReLU<T>>("relu1");
  main_.template emplace<Conv2d<T>>("conv2", cout, cout, 3, 1, 1, false);
  main_.template emplace<BatchNorm2d<T>>("bn2", cout);
  if (stride != 1 || cin != cout) {
    skip_.template emplace<Conv2d<T>>("conv", cin, cout, 1, stride, 0, false);
    skip_.template emplace<BatchNorm2d<T>>("bn", cout);
  }
}

template <class T>
Shape ResBlock<T>::output_shape(const Shape& in) const {
  return main_.output_shape(in);
}

template <class T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, bool train) {
  Tensor<T> y = main_.forward(x, train);
  const Tensor<T> s = skip_.size() ? skip_.forward(x, train) : x;
  if (s.shape != y.shape) throw std::logic_error("resblock: skip shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = y[i] + s[i];
    y[i] = v > 0 ? v : T(0);
  }
  y_ = y;
  return y;
}

template <class T>
Tensor<T> ResBlock<T>::backward(const Tensor<T>& gy) {
  Tensor<T> g(gy.shape);
  for (std::size_t i = 0; i < gy.size(); ++i) g[i] = y_[i] > 0 ? gy[i] : T(0);
  Tensor<T> gx = main_.backward(g);
  const Tensor<T> gs = skip_.size() ? skip_.backward(g) : g;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
  return gx;
}

template <class T>
void ResBlock<T>::collect(const std::string& prefix, std::vector<Param<T>*>& out) {
  main_.collect(prefix, out);
  skip_.collect(prefix + "skip.", out);
}

template <class T>
void ResBlock<T>::init(Rng& rng) {
  main_.init(rng);
  skip_.init(rng);
}

template <class T>
std::vector<Param<T>*> parameters(Layer<T>& root, const std::string& prefix) {
  std::vector<Param<T>*> out;
  root.collect(prefix, out);
  return out;
}

template <class T>
void zero_grad(const std::vector<Param<T>*>& params) {
  for (auto* p : params) p->grad.zero();
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <class T>
double kl_loss_from_logits(const Tensor<T>& logits, const Tensor<T>& target, Tensor<T>* grad) {
  if (logits.shape != target.shape) {
    throw std::invalid_argument("kl loss: shape mismatch " + shape_str(logits.shape) + " vs " +
                                shape_str(target.shape));
  }
  const int n = logits.dim(0);
  const std::size_t m = logits.stride0();
  if (grad) *grad = Tensor<T>(logits.shape);
  double total = 0.0;
  std::vector<double> logq(m);
  for (int i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * m;
    const T* a = target.ptr() + i * m;
    const double mx = *std::max_element(z, z + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    double kl = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      logq[j] = z[j] - lse;
      if (a[j] > 0) kl += a[j] * (std::log(static_cast<double>(a[j])) - logq[j]);
    }
    total += kl;
    if (grad) {
      double asum = 0.0;
      for (std::size_t j = 0; j < m; ++j) asum += a[j];
      T* g = grad->ptr() + i * m;
      for (std::size_t j = 0; j < m; ++j) g[j] = static_cast<T>((std::exp(logq[j]) * asum - a[j]) / n);
    }
  }
  return total / n;
}

template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) {
  if (pred.shape != target.shape) {
    throw std::invalid_argument("mse loss: shape mismatch " + shape_str(pred.shape) + " vs " +
                                shape_str(target.shape));
  }
  const double count = static_cast<double>(pred.size());
  if (grad) *grad = Tensor<T>(pred.shape);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    s += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d / count);
  }
  return s / count;
}

#define GAZERACER_NN_INSTANTIATE(T)                                                        \
  template struct Tensor<T>;                                                               \
  template class Linear<T>;                                                                \
  template class Conv2d<T>;                                                                \
  template class Conv1d<T>;                                                                \
  template class BatchNorm2d<T>;                                                           \
  template class ReLU<T>;                                                                  \
  template class MaxPool2d<T>;                                                             \
  template class UpsampleNearest<T>;                                                       \
  template class SoftmaxSpatial<T>;                                                        \
  template class ChannelMean<T>;                                                           \
  template class PoolLength<T>;                                                            \
  template class Flatten<T>;                                                               \
  template class Sequential<T>;                                                            \
  template class ResBlock<T>;                                                              \
  template std::vector<Param<T>*> parameters(Layer<T>&, const std::string&);               \
  template void zero_grad(const std::vector<Param<T>*>&);                                  \
  template double kl_loss_from_logits(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);     \
  template double mse_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                \
  template void gemm(int, int, int, const T*, int, const T*, int, T*, int, bool);

GAZERACER_NN_INSTANTIATE(float)
GAZERACER_NN_INSTANTIATE(double)

}  // namespace gazeracer::nn
