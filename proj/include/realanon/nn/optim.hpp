#pragma once

#include <cstdint>
#include <vector>

#include "realanon/nn/layers.hpp"

namespace realanon::nn {

struct AdamOptions {
  double learning_rate = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Gradients are read, not cleared, by step().
template <typename T>
class Adam {
 public:
  Adam(ParameterRefs<T> params, AdamOptions options);

  void step();
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const ParameterRefs<T>& params() const { return params_; }

 private:
  ParameterRefs<T> params_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace realanon::nn
