#include "realanon/nn/tensor.hpp"

#include <sstream>

#include "realanon/errors.hpp"

namespace realanon::nn {

template <typename T>
std::string Tensor<T>::shape_string() const {
  std::ostringstream os;
  os << "(" << n_ << ", " << c_ << ", " << h_ << ", " << w_ << ")";
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(int n, int c, int h, int w) const {
  if (static_cast<std::size_t>(n) * c * h * w != data_.size()) throw ShapeError("reshape: element count differs");
  Tensor out;
  out.n_ = n;
  out.c_ = c;
  out.h_ = h;
  out.w_ = w;
  out.data_ = data_;
  return out;
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& o) {
  if (!same_shape(o)) throw ShapeError("tensor add: " + shape_string() + " vs " + o.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator*=(T s) {
  for (auto& v : data_) v *= s;
  return *this;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor<T>& first = *parts[0];
  int channels = 0;
  for (const auto* p : parts) {
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w())
      throw ShapeError("concat: " + p->shape_string() + " vs " + first.shape_string());
    channels += p->c();
  }
  Tensor<T> out(first.n(), channels, first.h(), first.w());
  for (int n = 0; n < first.n(); ++n) {
    int offset = 0;
    for (const auto* p : parts) {
      std::copy_n(p->sample(n), static_cast<std::size_t>(p->c()) * p->plane_size(), out.plane(n, offset));
      offset += p->c();
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x.c()) throw ShapeError("slice_channels: out of range");
  Tensor<T> out(x.n(), count, x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    std::copy_n(x.plane(n, begin), static_cast<std::size_t>(count) * x.plane_size(), out.sample(n));
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  Tensor<T> out(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      const int w2 = x.w() * 2;
      for (int y = 0; y < x.h(); ++y) {
        T* r0 = dst + static_cast<std::size_t>(2 * y) * w2;
        for (int xx = 0; xx < x.w(); ++xx) r0[2 * xx] = r0[2 * xx + 1] = src[y * x.w() + xx];
        std::copy_n(r0, w2, r0 + w2);
      }
    }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& grad) {
  if (grad.h() % 2 || grad.w() % 2) throw ShapeError("upsample backward: odd spatial size");
  Tensor<T> out(grad.n(), grad.c(), grad.h() / 2, grad.w() / 2);
  for (int n = 0; n < grad.n(); ++n)
    for (int c = 0; c < grad.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int x = 0; x < out.w(); ++x)
          out(n, c, y, x) = grad(n, c, 2 * y, 2 * x) + grad(n, c, 2 * y, 2 * x + 1) + grad(n, c, 2 * y + 1, 2 * x) +
                            grad(n, c, 2 * y + 1, 2 * x + 1);
  return out;
}

#define REALANON_INSTANTIATE(T)                                                     \
  template class Tensor<T>;                                                         \
  template Tensor<T> concat_channels<T>(std::span<const Tensor<T>* const>);         \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int, int);                 \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);                       \
  template Tensor<T> upsample_nearest2x_backward<T>(const Tensor<T>&);

REALANON_INSTANTIATE(float)
REALANON_INSTANTIATE(double)
#undef REALANON_INSTANTIATE

}  // namespace realanon::nn
