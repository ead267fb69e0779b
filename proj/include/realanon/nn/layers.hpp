#pragma once

#include <string>
#include <vector>

#include "realanon/nn/tensor.hpp"
#include "realanon/rng.hpp"

namespace realanon::nn {

/// A trainable tensor and its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s, T fill = T(0));
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParameterRefs = std::vector<Parameter<T>*>;

/**
 * 2-D convolution with "same" zero padding (kernel / 2) and equalized
 * learning rate: weights are stored N(0, 1) and scaled by 1/sqrt(fan_in) at
 * run time. Caches its input for the backward pass.
 */
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, const std::string& name, bool bias = true);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void parameters(ParameterRefs<T>& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1;
  bool has_bias_ = true;
  T scale_ = T(1);
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// Fully connected layer on (N, C, 1, 1) tensors with equalized learning rate
/// and an optional learning-rate multiplier.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, const std::string& name, T lr_multiplier = T(1), T bias_init = T(0));

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void parameters(ParameterRefs<T>& out);

 private:
  int in_ = 0, out_ = 0;
  T lr_mul_ = T(1), bias_init_ = T(0), scale_ = T(1);
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// Leaky ReLU (slope 0.2) with sqrt(2) gain.
template <typename T>
class LeakyRelu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Tensor<T> input_;
};

/// Per-sample, per-channel standardization over spatial positions (no affine).
template <typename T>
class InstanceNorm {
 public:
  explicit InstanceNorm(T eps = T(1e-8)) : eps_(eps) {}
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  T eps_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

template <typename T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Tensor<T> output_;
};

/// Scales each input vector to unit mean square (mapping network input).
template <typename T>
class SecondMomentNorm {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Tensor<T> input_;
  std::vector<T> inv_rms_;
};

/**
 * Style modulation: multiplies each channel by an affine function of the
 * style vector, s = A(w), with the affine bias initialised to one.
 */
template <typename T>
class StyleModulation {
 public:
  StyleModulation() = default;
  StyleModulation(int style_dim, int channels, const std::string& name);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& style);
  /// Returns the input gradient; adds the style gradient into `grad_style`.
  Tensor<T> backward(const Tensor<T>& grad_out, Tensor<T>& grad_style);
  void parameters(ParameterRefs<T>& out);

 private:
  Linear<T> affine_;
  Tensor<T> input_, scales_;
};

}  // namespace realanon::nn
