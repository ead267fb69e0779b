#include "realanon/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "realanon/errors.hpp"

namespace realanon::nn {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;

int out_size(int in, int kernel, int stride) { return (in + 2 * (kernel / 2) - kernel) / stride + 1; }

// Valid output range [lo, hi) for which ox * stride - pad + k lands inside [0, size).
inline void valid_range(int size, int out, int stride, int offset, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = (size - 1 - offset) >= 0 ? (size - 1 - offset) / stride + 1 : 0;
  hi = std::min(hi, out);
  lo = std::min(lo, hi);
}

// cols is (C*k*k) x (N*Ho*Wo), row-major.
template <typename T>
void im2col(const Tensor<T>& x, int kernel, int stride, int ho, int wo, T* cols) {
  const int pad = kernel / 2;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = p * x.n();
  for (int c = 0; c < x.c(); ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * np;
        int x_lo, x_hi;
        valid_range(x.w(), wo, stride, kx - pad, x_lo, x_hi);
        for (int n = 0; n < x.n(); ++n) {
          const T* src = x.plane(n, c);
          T* dst = row + n * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            T* drow = dst + static_cast<std::size_t>(oy) * wo;
            if (iy < 0 || iy >= x.h()) {
              std::fill_n(drow, wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * x.w() + (kx - pad);
            std::fill_n(drow, x_lo, T(0));
            if (stride == 1) {
              std::copy(srow + x_lo, srow + x_hi, drow + x_lo);
            } else {
              for (int ox = x_lo; ox < x_hi; ++ox) drow[ox] = srow[ox * stride];
            }
            std::fill(drow + x_hi, drow + wo, T(0));
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, int kernel, int stride, int ho, int wo, Tensor<T>& dx) {
  const int pad = kernel / 2;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = p * dx.n();
  for (int c = 0; c < dx.c(); ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) * np;
        int x_lo, x_hi;
        valid_range(dx.w(), wo, stride, kx - pad, x_lo, x_hi);
        for (int n = 0; n < dx.n(); ++n) {
          T* dst = dx.plane(n, c);
          const T* src = row + n * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= dx.h()) continue;
            T* drow = dst + static_cast<std::size_t>(iy) * dx.w() + (kx - pad);
            const T* srow = src + static_cast<std::size_t>(oy) * wo;
            if (stride == 1) {
              for (int ox = x_lo; ox < x_hi; ++ox) drow[ox] += srow[ox];
            } else {
              for (int ox = x_lo; ox < x_hi; ++ox) drow[ox * stride] += srow[ox];
            }
          }
        }
      }
}

}  // namespace

template <typename T>
Parameter<T>::Parameter(std::string n, std::vector<int> s, T fill) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, fill);
  grad.assign(count, T(0));
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, const std::string& name, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      has_bias_(bias),
      scale_(T(1) / std::sqrt(static_cast<T>(in_channels * kernel * kernel))),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", {bias ? out_channels : 0}) {
  if (kernel % 2 == 0) throw ConfigError("Conv2d: kernel size must be odd");
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  for (auto& v : weight_.value) v = static_cast<T>(rng.normal());
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_) throw ShapeError("Conv2d " + weight_.name + ": expected " + std::to_string(in_) +
                                     " channels, got " + x.shape_string());
  input_ = x;
  const int ho = out_size(x.h(), kernel_, stride_), wo = out_size(x.w(), kernel_, stride_);
  const int k = in_ * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(ho) * wo, np = p * x.n();
  RowMatrix<T> cols(k, static_cast<Eigen::Index>(np));
  im2col(x, kernel_, stride_, ho, wo, cols.data());
  ConstRowMap<T> w(weight_.value.data(), out_, k);
  RowMatrix<T> y(out_, static_cast<Eigen::Index>(np));
  y.noalias() = w * cols;
  Tensor<T> out(x.n(), out_, ho, wo);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_; ++o) {
      const T b = has_bias_ ? bias_.value[o] : T(0);
      const T* src = y.data() + o * np + n * p;
      T* dst = out.plane(n, o);
      for (std::size_t i = 0; i < p; ++i) dst[i] = scale_ * src[i] + b;
    }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& x = input_;
  const int ho = grad_out.h(), wo = grad_out.w();
  const int k = in_ * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(ho) * wo, np = p * x.n();
  RowMatrix<T> dy(out_, static_cast<Eigen::Index>(np));
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_; ++o) std::copy_n(grad_out.plane(n, o), p, dy.data() + o * np + n * p);
  if (has_bias_) {
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.row(o).sum();
  }
  RowMatrix<T> cols(k, static_cast<Eigen::Index>(np));
  im2col(x, kernel_, stride_, ho, wo, cols.data());
  RowMap<T> dw(weight_.grad.data(), out_, k);
  dw.noalias() += scale_ * (dy * cols.transpose());
  ConstRowMap<T> w(weight_.value.data(), out_, k);
  cols.noalias() = scale_ * (w.transpose() * dy);
  Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
  col2im(cols.data(), kernel_, stride_, ho, wo, dx);
  return dx;
}

template <typename T>
void Conv2d<T>::parameters(ParameterRefs<T>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features, const std::string& name, T lr_multiplier, T bias_init)
    : in_(in_features),
      out_(out_features),
      lr_mul_(lr_multiplier),
      bias_init_(bias_init),
      scale_(lr_multiplier / std::sqrt(static_cast<T>(in_features))),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  for (auto& v : weight_.value) v = static_cast<T>(rng.normal()) / lr_mul_;
  std::fill(bias_.value.begin(), bias_.value.end(), bias_init_ / lr_mul_);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.c() * x.h() * x.w() != in_) throw ShapeError("Linear " + weight_.name + ": got " + x.shape_string());
  input_ = x;
  ConstRowMap<T> xm(x.data(), x.n(), in_);
  ConstRowMap<T> w(weight_.value.data(), out_, in_);
  Tensor<T> out(x.n(), out_, 1, 1);
  RowMap<T> y(out.data(), x.n(), out_);
  y.noalias() = scale_ * (xm * w.transpose());
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_; ++o) y(n, o) += bias_.value[o] * lr_mul_;
  return out;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const int n = input_.n();
  ConstRowMap<T> dy(grad_out.data(), n, out_);
  ConstRowMap<T> xm(input_.data(), n, in_);
  RowMap<T> dw(weight_.grad.data(), out_, in_);
  dw.noalias() += scale_ * (dy.transpose() * xm);
  for (int o = 0; o < out_; ++o) bias_.grad[o] += lr_mul_ * dy.col(o).sum();
  ConstRowMap<T> w(weight_.value.data(), out_, in_);
  Tensor<T> dx(input_.n(), input_.c(), input_.h(), input_.w());
  RowMap<T> dxm(dx.data(), n, in_);
  dxm.noalias() = scale_ * (dy * w);
  return dx;
}

template <typename T>
void Linear<T>::parameters(ParameterRefs<T>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- activations

namespace {
constexpr double kSlope = 0.2;
constexpr double kGain = 1.4142135623730951;
}  // namespace

template <typename T>
Tensor<T> LeakyRelu<T>::forward(const Tensor<T>& x) {
  input_ = x;
  Tensor<T> out = x;
  for (auto& v : out.values()) v = static_cast<T>(kGain) * (v > 0 ? v : static_cast<T>(kSlope) * v);
  return out;
}

template <typename T>
Tensor<T> LeakyRelu<T>::backward(const Tensor<T>& grad_out) const {
  Tensor<T> dx = grad_out;
  const auto in = input_.values();
  auto d = dx.values();
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] *= static_cast<T>(kGain) * (in[i] > 0 ? T(1) : static_cast<T>(kSlope));
  return dx;
}

template <typename T>
Tensor<T> InstanceNorm<T>::forward(const Tensor<T>& x) {
  normalized_ = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  inv_std_.assign(static_cast<std::size_t>(x.n()) * x.c(), T(0));
  const std::size_t p = x.plane_size();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T mean = 0;
      for (std::size_t i = 0; i < p; ++i) mean += src[i];
      mean /= static_cast<T>(p);
      T var = 0;
      for (std::size_t i = 0; i < p; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<T>(p);
      const T inv = T(1) / std::sqrt(var + eps_);
      inv_std_[static_cast<std::size_t>(n) * x.c() + c] = inv;
      T* dst = normalized_.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) dst[i] = (src[i] - mean) * inv;
    }
  return normalized_;
}

template <typename T>
Tensor<T> InstanceNorm<T>::backward(const Tensor<T>& grad_out) const {
  Tensor<T> dx(grad_out.n(), grad_out.c(), grad_out.h(), grad_out.w());
  const std::size_t p = grad_out.plane_size();
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = normalized_.plane(n, c);
      T mean_dy = 0, mean_dy_xh = 0;
      for (std::size_t i = 0; i < p; ++i) {
        mean_dy += dy[i];
        mean_dy_xh += dy[i] * xh[i];
      }
      mean_dy /= static_cast<T>(p);
      mean_dy_xh /= static_cast<T>(p);
      const T inv = inv_std_[static_cast<std::size_t>(n) * grad_out.c() + c];
      T* d = dx.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] = inv * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
    }
  return dx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.values()) v = T(1) / (T(1) + std::exp(-v));
  return output_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& grad_out) const {
  Tensor<T> dx = grad_out;
  const auto y = output_.values();
  auto d = dx.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i] * (T(1) - y[i]);
  return dx;
}

template <typename T>
Tensor<T> SecondMomentNorm<T>::forward(const Tensor<T>& x) {
  input_ = x;
  const std::size_t dim = x.size() / x.n();
  inv_rms_.assign(x.n(), T(0));
  Tensor<T> out = x;
  for (int n = 0; n < x.n(); ++n) {
    T ms = 0;
    const T* src = x.sample(n);
    for (std::size_t i = 0; i < dim; ++i) ms += src[i] * src[i];
    ms /= static_cast<T>(dim);
    const T inv = T(1) / std::sqrt(ms + T(1e-8));
    inv_rms_[n] = inv;
    T* dst = out.sample(n);
    for (std::size_t i = 0; i < dim; ++i) dst[i] *= inv;
  }
  return out;
}

template <typename T>
Tensor<T> SecondMomentNorm<T>::backward(const Tensor<T>& grad_out) const {
  const std::size_t dim = input_.size() / input_.n();
  Tensor<T> dx = grad_out;
  for (int n = 0; n < input_.n(); ++n) {
    const T* x = input_.sample(n);
    const T* dy = grad_out.sample(n);
    const T inv = inv_rms_[n];
    T dot = 0;
    for (std::size_t i = 0; i < dim; ++i) dot += dy[i] * x[i];
    const T k = inv * inv * inv * dot / static_cast<T>(dim);
    T* d = dx.sample(n);
    for (std::size_t i = 0; i < dim; ++i) d[i] = inv * dy[i] - k * x[i];
  }
  return dx;
}

// ---------------------------------------------------------------- modulation

template <typename T>
StyleModulation<T>::StyleModulation(int style_dim, int channels, const std::string& name)
    : affine_(style_dim, channels, name + ".affine", T(1), T(1)) {}

template <typename T>
void StyleModulation<T>::init(Rng& rng) {
  affine_.init(rng);
}

template <typename T>
Tensor<T> StyleModulation<T>::forward(const Tensor<T>& x, const Tensor<T>& style) {
  if (style.n() != x.n()) throw ShapeError("modulation: batch size mismatch");
  input_ = x;
  scales_ = affine_.forward(style);
  if (scales_.c() != x.c()) throw ShapeError("modulation: channel mismatch");
  Tensor<T> out = x;
  const std::size_t p = x.plane_size();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T s = scales_[static_cast<std::size_t>(n) * x.c() + c];
      T* d = out.plane(n, c);
      for (std::size_t i = 0; i < p; ++i) d[i] *= s;
    }
  return out;
}

template <typename T>
Tensor<T> StyleModulation<T>::backward(const Tensor<T>& grad_out, Tensor<T>& grad_style) {
  Tensor<T> dx = grad_out;
  Tensor<T> ds(scales_.n(), scales_.c(), 1, 1);
  const std::size_t p = grad_out.plane_size();
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c) {
      const std::size_t idx = static_cast<std::size_t>(n) * grad_out.c() + c;
      const T s = scales_[idx];
      const T* dy = grad_out.plane(n, c);
      const T* x = input_.plane(n, c);
      T* d = dx.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < p; ++i) {
        acc += dy[i] * x[i];
        d[i] = dy[i] * s;
      }
      ds[idx] = acc;
    }
  grad_style += affine_.backward(ds);
  return dx;
}

template <typename T>
void StyleModulation<T>::parameters(ParameterRefs<T>& out) {
  affine_.parameters(out);
}

#define REALANON_INSTANTIATE(T)         \
  template struct Parameter<T>;         \
  template class Conv2d<T>;             \
  template class Linear<T>;             \
  template class LeakyRelu<T>;          \
  template class InstanceNorm<T>;       \
  template class Sigmoid<T>;            \
  template class SecondMomentNorm<T>;   \
  template class StyleModulation<T>;

REALANON_INSTANTIATE(float)
REALANON_INSTANTIATE(double)
#undef REALANON_INSTANTIATE

}  // namespace realanon::nn
