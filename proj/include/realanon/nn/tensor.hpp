#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace realanon::nn {

/// Dense NCHW tensor. Vectors are stored as (N, C, 1, 1).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size(); }
  const T* plane(int n, int c) const { return data_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size(); }
  T* sample(int n) { return plane(n, 0); }
  const T* sample(int n) const { return plane(n, 0); }

  T& operator()(int n, int c, int y, int x) { return plane(n, c)[static_cast<std::size_t>(y) * w_ + x]; }
  T operator()(int n, int c, int y, int x) const { return plane(n, c)[static_cast<std::size_t>(y) * w_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_string() const;
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  /// Same data, new shape with identical element count.
  Tensor reshaped(int n, int c, int h, int w) const;

  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(T s);
  bool operator==(const Tensor&) const = default;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

/// Channel concatenation of same-sized tensors.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts);

/// Inverse of concat_channels for gradients: channel slice [begin, begin+count).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count);

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& grad);

template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& x) {
  Tensor<U> out(x.n(), x.c(), x.h(), x.w());
  std::transform(x.values().begin(), x.values().end(), out.values().begin(),
                 [](T v) { return static_cast<U>(v); });
  return out;
}

}  // namespace realanon::nn
