#include "realanon/nn/optim.hpp"

#include <cmath>

#include "realanon/errors.hpp"

namespace realanon::nn {

template <typename T>
Adam<T>::Adam(ParameterRefs<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (options.learning_rate <= 0 || options.beta1 < 0 || options.beta1 >= 1 || options.beta2 <= 0 ||
      options.beta2 >= 1 || options.epsilon <= 0)
    throw ConfigError("Adam: invalid hyperparameters");
  for (auto* p : params_) {
    m_.emplace_back(p->size(), T(0));
    v_.emplace_back(p->size(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const T lr = static_cast<T>(options_.learning_rate * std::sqrt(c2) / c1);
  const T eps = static_cast<T>(options_.epsilon * std::sqrt(c2));
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T g = p.grad[i];
      m[i] = tb1 * m[i] + (T(1) - tb1) * g;
      v[i] = tb2 * v[i] + (T(1) - tb2) * g * g;
      p.value[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace realanon::nn
