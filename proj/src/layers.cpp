#include "siamtrack/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace siamtrack {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

bool is_pointwise(const ConvSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.pad == 0;
}

// col layout: row = (ci * k + ky) * k + kx, column = oy * ow + ox.
template <typename T>
void im2col(const T* x, int cin, int ih, int iw, const ConvSpec& s, int oh, int ow, T* col) {
  const int k = s.kernel;
  for (int ci = 0; ci < cin; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * ih * iw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= ih) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * iw;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            dst[ox] = (ix >= 0 && ix < iw) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int cin, int ih, int iw, const ConvSpec& s, int oh, int ow, T* x) {
  const int k = s.kernel;
  for (int ci = 0; ci < cin; ++ci) {
    T* plane = x + static_cast<std::size_t>(ci) * ih * iw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= ih) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * iw;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < iw) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(const ConvSpec& spec) : spec_(spec) {
  if (spec.in < 1 || spec.out < 1 || spec.kernel < 1 || spec.stride < 1 || spec.dilation < 1 ||
      spec.pad < 0) {
    throw ConfigError("invalid convolution spec");
  }
  weight.reset(Shape{spec.out, spec.in, spec.kernel, spec.kernel});
  if (spec.bias) bias.reset(Shape{1, spec.out, 1, 1});
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(spec_.in) * spec_.kernel * spec_.kernel;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : weight.value.values()) v = static_cast<T>(dist(rng));
  if (spec_.bias) bias.value.zero();
}

template <typename T>
void Conv2d<T>::set_identity() {
  if (spec_.in != spec_.out) throw ShapeError("identity conv needs in == out channels");
  weight.value.zero();
  const int c = spec_.kernel / 2;
  for (int o = 0; o < spec_.out; ++o) weight.value.at(o, o, c, c) = T(1);
  if (spec_.bias) bias.value.zero();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Cache* cache) const {
  if (x.c() != spec_.in) {
    throw ShapeError("conv expects " + std::to_string(spec_.in) + " channels, got " +
                     std::to_string(x.c()));
  }
  const int oh = spec_.out_size(x.h());
  const int ow = spec_.out_size(x.w());
  if (oh < 1 || ow < 1) throw ShapeError("input " + x.shape().str() + " too small for conv");
  Tensor<T> y(Shape{x.n(), spec_.out, oh, ow});
  const int kdim = spec_.in * spec_.kernel * spec_.kernel;
  const int hw = oh * ow;
  std::vector<T> col;
  if (!is_pointwise(spec_)) col.resize(static_cast<std::size_t>(kdim) * hw);
  CMapMat<T> W(weight.value.data(), spec_.out, kdim);
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.sample(n);
    if (!is_pointwise(spec_)) {
      im2col(src, spec_.in, x.h(), x.w(), spec_, oh, ow, col.data());
      src = col.data();
    }
    MapMat<T> Y(y.sample(n), spec_.out, hw);
    Y.noalias() = W * CMapMat<T>(src, kdim, hw);
    if (spec_.bias) {
      for (int o = 0; o < spec_.out; ++o) Y.row(o).array() += bias.value.data()[o];
    }
  }
  if (cache) cache->input = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
  const Tensor<T>& x = cache.input;
  const int oh = dy.h();
  const int ow = dy.w();
  const int kdim = spec_.in * spec_.kernel * spec_.kernel;
  const int hw = oh * ow;
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(x.shape());
  std::vector<T> col;
  std::vector<T> dcol;
  if (!is_pointwise(spec_)) {
    col.resize(static_cast<std::size_t>(kdim) * hw);
    if (need_dx) dcol.resize(col.size());
  }
  MapMat<T> dW(weight.grad.data(), spec_.out, kdim);
  CMapMat<T> W(weight.value.data(), spec_.out, kdim);
  for (int n = 0; n < x.n(); ++n) {
    CMapMat<T> dY(dy.sample(n), spec_.out, hw);
    const T* src = x.sample(n);
    if (!is_pointwise(spec_)) {
      im2col(src, spec_.in, x.h(), x.w(), spec_, oh, ow, col.data());
      src = col.data();
    }
    dW.noalias() += dY * CMapMat<T>(src, kdim, hw).transpose();
    if (spec_.bias) {
      for (int o = 0; o < spec_.out; ++o) bias.grad.data()[o] += dY.row(o).sum();
    }
    if (need_dx) {
      if (is_pointwise(spec_)) {
        MapMat<T>(dx.sample(n), kdim, hw).noalias() = W.transpose() * dY;
      } else {
        MapMat<T>(dcol.data(), kdim, hw).noalias() = W.transpose() * dY;
        col2im(dcol.data(), spec_.in, x.h(), x.w(), spec_, oh, ow, dx.sample(n));
      }
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  if (v.param) {
    v.param(prefix + ".weight", weight);
    if (spec_.bias) v.param(prefix + ".bias", bias);
  }
}

template <typename T>
void Conv2d<T>::set_group(ParamGroup g) {
  weight.group = g;
  bias.group = g;
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, T eps, T momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma.reset(Shape{1, channels, 1, 1}, T(1));
  beta.reset(Shape{1, channels, 1, 1}, T(0));
  running_mean = Tensor<T>(Shape{1, channels, 1, 1}, T(0));
  running_var = Tensor<T>(Shape{1, channels, 1, 1}, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode, Cache* cache) {
  if (x.c() != channels_) throw ShapeError("batch norm channel mismatch");
  const int N = x.n();
  const std::size_t plane = x.shape().plane();
  const double count = static_cast<double>(N) * plane;
  Tensor<T> y(x.shape());
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(x.shape());
  std::vector<T> inv_std(channels_);
  for (int c = 0; c < channels_; ++c) {
    T mean;
    T var;
    if (mode == Mode::train) {
      double s = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / count;
      double sq = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double v = sq / count;
      mean = static_cast<T>(m);
      var = static_cast<T>(v);
      const double unbiased = count > 1 ? sq / (count - 1) : v;
      T& rm = running_mean.data()[c];
      T& rv = running_var.data()[c];
      rm = static_cast<T>((1 - momentum_) * rm + momentum_ * m);
      rv = static_cast<T>((1 - momentum_) * rv + momentum_ * unbiased);
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const T is = T(1) / std::sqrt(var + eps_);
    inv_std[c] = is;
    const T g = gamma.value.data()[c];
    const T b = beta.value.data()[c];
    for (int n = 0; n < N; ++n) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      T* h = cache ? xhat.plane(n, c) : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (p[i] - mean) * is;
        if (h) h[i] = xh;
        q[i] = g * xh + b;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  const Tensor<T>& xhat = cache.xhat;
  const int N = dy.n();
  const std::size_t plane = dy.shape().plane();
  const double count = static_cast<double>(N) * plane;
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0;
    double sum_dy_xh = 0;
    for (int n = 0; n < N; ++n) {
      const T* d = dy.plane(n, c);
      const T* h = xhat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += d[i];
        sum_dy_xh += d[i] * h[i];
      }
    }
    gamma.grad.data()[c] += static_cast<T>(sum_dy_xh);
    beta.grad.data()[c] += static_cast<T>(sum_dy);
    const T g = gamma.value.data()[c];
    const T is = cache.inv_std[c];
    if (cache.mode == Mode::train) {
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xh = static_cast<T>(sum_dy_xh / count);
      for (int n = 0; n < N; ++n) {
        const T* d = dy.plane(n, c);
        const T* h = xhat.plane(n, c);
        T* o = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) o[i] = g * is * (d[i] - mean_dy - h[i] * mean_dy_xh);
      }
    } else {
      for (int n = 0; n < N; ++n) {
        const T* d = dy.plane(n, c);
        T* o = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) o[i] = g * is * d[i];
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  if (v.param) {
    v.param(prefix + ".gamma", gamma);
    v.param(prefix + ".beta", beta);
  }
  if (v.buffer) {
    v.buffer(prefix + ".running_mean", running_mean);
    v.buffer(prefix + ".running_var", running_var);
  }
}

template <typename T>
void BatchNorm2d<T>::set_group(ParamGroup g) {
  gamma.group = g;
  beta.group = g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T* s = x.data();
  T* d = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = s[i] > T(0) ? s[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  dy.require_same(y, "relu_backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data()[i] = y.data()[i] > T(0) ? dy.data()[i] : T(0);
  return dx;
}

template <typename T>
ConvBn<T>::ConvBn(const ConvSpec& spec, bool relu)
    : conv(ConvSpec{spec.in, spec.out, spec.kernel, spec.stride, spec.pad, spec.dilation, false}),
      bn(spec.out),
      relu_(relu) {}

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, Mode mode, Cache* cache) {
  Tensor<T> y = bn.forward(conv.forward(x, cache ? &cache->conv : nullptr), mode,
                           cache ? &cache->bn : nullptr);
  if (relu_) {
    y = relu(y);
    if (cache) cache->out = y;
  }
  return y;
}

template <typename T>
Tensor<T> ConvBn<T>::backward(const Tensor<T>& dy, const Cache& cache, bool need_dx) {
  Tensor<T> g = relu_ ? relu_backward(dy, cache.out) : dy;
  return conv.backward(bn.backward(g, cache.bn), cache.conv, need_dx);
}

template <typename T>
void ConvBn<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  conv.visit(v, prefix + ".conv");
  bn.visit(v, prefix + ".bn");
}

template <typename T>
void ConvBn<T>::set_group(ParamGroup g) {
  conv.set_group(g);
  bn.set_group(g);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBn<float>;
template class ConvBn<double>;
template Tensor<float> relu(const Tensor<float>&);
template Tensor<double> relu(const Tensor<double>&);
template Tensor<float> relu_backward(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> relu_backward(const Tensor<double>&, const Tensor<double>&);

}  // namespace siamtrack
