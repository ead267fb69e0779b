#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "realanon/image.hpp"
#include "realanon/nn/layers.hpp"
#include "realanon/nn/tensor.hpp"

namespace realanon {

enum class Conditioning { None, DenseEmbedding };

/**
 * Shape of a style-based U-Net inpainting generator.
 *
 * Channels double per downsampling level starting at `base_channels` and
 * saturate at `max_channels`. The input is the masked image (3), the keep
 * mask (1) and, for dense conditioning, the surface embedding (16).
 */
struct GeneratorConfig {
  int height = 288;
  int width = 160;
  int n_downsamples = 5;
  Conditioning condition = Conditioning::DenseEmbedding;
  int base_channels = 64;
  int max_channels = 512;
  int z_dim = 512;
  int w_dim = 512;
  int mapping_layers = 2;
  int embedding_channels = EmbeddingMap::kDenseChannels;

  /// Full-body generator guided by dense embeddings, 288x160.
  static GeneratorConfig full_body_cse();
  static GeneratorConfig full_body_unconditional();
  /// Keypoint-free face generator, 256x256.
  static GeneratorConfig face();
  /// Desk-scale configurations used for the procedural data and tests.
  static GeneratorConfig toy_body(Conditioning condition);
  static GeneratorConfig toy_face();

  int channels(int level) const;
  int input_channels() const;
  int bottleneck_height() const { return height >> n_downsamples; }
  int bottleneck_width() const { return width >> n_downsamples; }
  /// Throws ConfigError when sizes are not divisible by 2^n_downsamples.
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Sampling noise z; standard normal.
struct LatentCode {
  std::vector<float> z;
  static LatentCode sample(int dim, std::uint64_t seed);
  bool operator==(const LatentCode&) const = default;
};

/// Output of the mapping network; broadcast to every decoder layer. Kept in
/// double precision so that edits and truncation are exact vector algebra.
struct StyleVector {
  std::vector<double> w;
  bool operator==(const StyleVector&) const = default;
};

/// Generator input batch; images and masks are (N,3,H,W) and (N,1,H,W),
/// the condition (N,16,H,W) or empty.
template <typename T>
struct GeneratorBatch {
  nn::Tensor<T> image;
  nn::Tensor<T> mask;
  nn::Tensor<T> condition;
};

template <typename T>
using FeaturePyramid = std::vector<nn::Tensor<T>>;

/**
 * U-Net generator: a normalization-free residual encoder, and a style
 * decoder whose layers run instance norm -> conv -> style modulation.
 * Encoder features enter the decoder through instance-normalized additive
 * skips at every resolution.
 *
 * Layers cache activations, so one instance must not run concurrently.
 * forward()/forward_style() must precede backward().
 */
template <typename T>
class Generator {
 public:
  Generator(const GeneratorConfig& config, std::uint64_t seed);
  Generator(const Generator& other);
  Generator& operator=(const Generator& other);
  ~Generator();

  const GeneratorConfig& config() const { return config_; }

  /// z: (N, z_dim, 1, 1) -> w: (N, w_dim, 1, 1).
  nn::Tensor<T> map_latent(const nn::Tensor<T>& z);
  /// Returns n_downsamples + 1 feature maps, finest first.
  FeaturePyramid<T> encode(const nn::Tensor<T>& masked_image, const nn::Tensor<T>& mask,
                           const nn::Tensor<T>* condition);
  /// Raw generator output in (0, 1), before composition with the original.
  nn::Tensor<T> decode(const FeaturePyramid<T>& features, const nn::Tensor<T>& w);

  nn::Tensor<T> forward(const GeneratorBatch<T>& batch, const nn::Tensor<T>& z);
  nn::Tensor<T> forward_style(const GeneratorBatch<T>& batch, const nn::Tensor<T>& w);

  /// Back-propagates d(loss)/d(raw output). Accumulates parameter gradients
  /// (the mapping network only when the last call was forward()) and
  /// returns d(loss)/dw.
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_output);

  nn::ParameterRefs<T> parameters();
  std::size_t parameter_count();
  /// Parameters grouped by the resolution level of the layer output; the
  /// mapping network is excluded.
  std::vector<std::size_t> parameters_per_level();

  void zero_grad();

 private:
  struct Impl;
  GeneratorConfig config_;
  std::unique_ptr<Impl> impl_;
};

/// Inpainting composition: generated pixels where mask == 0, original where
/// mask == 1 (bit-exact select).
ImageTensor compose(const ImageTensor& original, const BinaryMask& keep_mask, const ImageTensor& generated);
template <typename T>
nn::Tensor<T> compose(const nn::Tensor<T>& original, const nn::Tensor<T>& keep_mask, const nn::Tensor<T>& generated);

template <typename T>
nn::Tensor<T> to_tensor(const ImageTensor& image);
template <typename T>
nn::Tensor<T> to_tensor(const BinaryMask& mask);
template <typename T>
nn::Tensor<T> to_tensor(const EmbeddingMap& map);
template <typename T>
ImageTensor to_image(const nn::Tensor<T>& t, int index = 0);

nn::Tensor<float> to_tensor(const LatentCode& z);
nn::Tensor<float> to_tensor(const StyleVector& w);

/// Single-image inpainting: compose(original, mask, G(original*mask, mask, cond, z)).
ImageTensor synthesize(Generator<float>& generator, const ImageTensor& original, const BinaryMask& keep_mask,
                       const EmbeddingMap* condition, const LatentCode& z);
ImageTensor synthesize_style(Generator<float>& generator, const ImageTensor& original, const BinaryMask& keep_mask,
                             const EmbeddingMap* condition, const StyleVector& w);
StyleVector map_latent(Generator<float>& generator, const LatentCode& z);

}  // namespace realanon
