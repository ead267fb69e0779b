#pragma once

#include <cstdint>
#include <memory>

#include "realanon/generator.hpp"

namespace realanon {

/// Residual discriminator without feature-pyramid outputs; sees the image,
/// the keep mask and, when configured, the dense condition.
struct DiscriminatorConfig {
  int height = 288;
  int width = 160;
  int n_downsamples = 5;
  Conditioning condition = Conditioning::DenseEmbedding;
  int base_channels = 64;
  int max_channels = 512;
  int embedding_channels = EmbeddingMap::kDenseChannels;

  /// Matches the generator's resolution, depth and conditioning.
  static DiscriminatorConfig matching(const GeneratorConfig& g);
  int channels(int level) const;
  int input_channels() const;
  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);
  Discriminator(const Discriminator& other);
  ~Discriminator();

  const DiscriminatorConfig& config() const { return config_; }

  /// Returns logits of shape (N, 1, 1, 1).
  nn::Tensor<T> forward(const nn::Tensor<T>& image, const nn::Tensor<T>& mask, const nn::Tensor<T>& condition);
  /// Accumulates parameter gradients; returns d(loss)/d(image).
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_logits);

  nn::ParameterRefs<T> parameters();
  void zero_grad();

 private:
  struct Impl;
  DiscriminatorConfig config_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace realanon
