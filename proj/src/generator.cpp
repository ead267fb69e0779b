#include "realanon/generator.hpp"

#include <algorithm>
#include <cmath>

#include "realanon/errors.hpp"
#include "realanon/rng.hpp"

namespace realanon {

GeneratorConfig GeneratorConfig::full_body_cse() { return {}; }

GeneratorConfig GeneratorConfig::full_body_unconditional() {
  GeneratorConfig c;
  c.condition = Conditioning::None;
  return c;
}

GeneratorConfig GeneratorConfig::face() {
  GeneratorConfig c;
  c.height = 256;
  c.width = 256;
  c.condition = Conditioning::None;
  return c;
}

GeneratorConfig GeneratorConfig::toy_body(Conditioning condition) {
  GeneratorConfig c;
  c.height = 96;
  c.width = 64;
  c.n_downsamples = 4;
  c.condition = condition;
  c.base_channels = 16;
  c.max_channels = 128;
  c.z_dim = 64;
  c.w_dim = 64;
  return c;
}

GeneratorConfig GeneratorConfig::toy_face() {
  GeneratorConfig c = toy_body(Conditioning::None);
  c.height = 64;
  c.width = 64;
  return c;
}

int GeneratorConfig::channels(int level) const {
  long c = base_channels;
  for (int i = 0; i < level && c < max_channels; ++i) c *= 2;
  return static_cast<int>(std::min<long>(c, max_channels));
}

int GeneratorConfig::input_channels() const {
  return 4 + (condition == Conditioning::DenseEmbedding ? embedding_channels : 0);
}

void GeneratorConfig::validate() const {
  if (height <= 0 || width <= 0 || n_downsamples < 0 || n_downsamples > 10)
    throw ConfigError("generator: invalid resolution or depth");
  const int f = 1 << n_downsamples;
  if (height % f != 0 || width % f != 0)
    throw ConfigError("generator: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^" + std::to_string(n_downsamples));
  if (base_channels <= 0 || max_channels < base_channels || z_dim <= 0 || w_dim <= 0 || mapping_layers < 1)
    throw ConfigError("generator: invalid channel or latent sizes");
  if (condition == Conditioning::DenseEmbedding && embedding_channels <= 0)
    throw ConfigError("generator: dense conditioning needs embedding channels");
}

LatentCode LatentCode::sample(int dim, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1a7e47ull));
  LatentCode z;
  z.z.resize(dim);
  for (auto& v : z.z) v = static_cast<float>(rng.normal());
  return z;
}

namespace {

template <typename T>
constexpr T kInvSqrt2 = T(0.70710678118654752440);

template <typename T>
std::size_t count_of(nn::ParameterRefs<T> refs) {
  std::size_t n = 0;
  for (auto* p : refs) n += p->size();
  return n;
}

template <typename T>
struct StyledConv {
  nn::InstanceNorm<T> norm;
  nn::Conv2d<T> conv;
  nn::StyleModulation<T> modulation;
  nn::Parameter<T> bias;
  nn::LeakyRelu<T> act;

  StyledConv() = default;
  StyledConv(int in, int out, int w_dim, const std::string& name)
      : conv(in, out, 3, 1, name + ".conv", false),
        modulation(w_dim, out, name + ".mod"),
        bias(name + ".bias", {out}) {}

  void init(Rng& rng) {
    conv.init(rng);
    modulation.init(rng);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, const nn::Tensor<T>& w) {
    nn::Tensor<T> h = modulation.forward(conv.forward(norm.forward(x)), w);
    const std::size_t p = h.plane_size();
    for (int n = 0; n < h.n(); ++n)
      for (int c = 0; c < h.c(); ++c) {
        T* d = h.plane(n, c);
        for (std::size_t i = 0; i < p; ++i) d[i] += bias.value[c];
      }
    return act.forward(h);
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& g, nn::Tensor<T>& grad_w) {
    nn::Tensor<T> h = act.backward(g);
    const std::size_t p = h.plane_size();
    for (int n = 0; n < h.n(); ++n)
      for (int c = 0; c < h.c(); ++c) {
        const T* d = h.plane(n, c);
        T acc = 0;
        for (std::size_t i = 0; i < p; ++i) acc += d[i];
        bias.grad[c] += acc;
      }
    return norm.backward(conv.backward(modulation.backward(h, grad_w)));
  }

  void parameters(nn::ParameterRefs<T>& out) {
    conv.parameters(out);
    modulation.parameters(out);
    out.push_back(&bias);
  }
};

template <typename T>
struct EncoderBlock {
  nn::Conv2d<T> a, b;
  nn::LeakyRelu<T> act_a, act_b;

  EncoderBlock() = default;
  EncoderBlock(int ch, const std::string& name) : a(ch, ch, 3, 1, name + ".conv0"), b(ch, ch, 3, 1, name + ".conv1") {}

  void init(Rng& rng) {
    a.init(rng);
    b.init(rng);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x) {
    nn::Tensor<T> h = act_b.forward(b.forward(act_a.forward(a.forward(x))));
    h += x;
    h *= kInvSqrt2<T>;
    return h;
  }

  nn::Tensor<T> backward(nn::Tensor<T> g) {
    g *= kInvSqrt2<T>;
    nn::Tensor<T> gh = a.backward(act_a.backward(b.backward(act_b.backward(g))));
    gh += g;
    return gh;
  }

  void parameters(nn::ParameterRefs<T>& out) {
    a.parameters(out);
    b.parameters(out);
  }
};

template <typename T>
struct DownLayer {
  nn::Conv2d<T> conv;
  nn::LeakyRelu<T> act;

  DownLayer() = default;
  DownLayer(int in, int out, const std::string& name) : conv(in, out, 3, 2, name) {}
  nn::Tensor<T> forward(const nn::Tensor<T>& x) { return act.forward(conv.forward(x)); }
  nn::Tensor<T> backward(const nn::Tensor<T>& g) { return conv.backward(act.backward(g)); }
};

}  // namespace

template <typename T>
struct Generator<T>::Impl {
  nn::SecondMomentNorm<T> z_norm;
  std::vector<nn::Linear<T>> mapping;
  std::vector<nn::LeakyRelu<T>> mapping_act;

  nn::Conv2d<T> from_input;
  nn::LeakyRelu<T> from_input_act;
  std::vector<EncoderBlock<T>> encoder;
  std::vector<DownLayer<T>> down;

  std::vector<nn::InstanceNorm<T>> skip_norm;
  std::vector<StyledConv<T>> dec_a, dec_b;
  nn::Conv2d<T> to_rgb;
  nn::Sigmoid<T> out_act;

  bool used_mapping = false;
  int batch = 0;
  int w_dim = 0;
};

template <typename T>
Generator<T>::Generator(const GeneratorConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config.validate();
  const int n = config.n_downsamples;
  Impl& m = *impl_;
  m.w_dim = config.w_dim;
  for (int i = 0; i < config.mapping_layers; ++i) {
    const int in = i == 0 ? config.z_dim : config.w_dim;
    m.mapping.emplace_back(in, config.w_dim, "mapping." + std::to_string(i), T(0.01));
    m.mapping_act.emplace_back();
  }
  m.from_input = nn::Conv2d<T>(config.input_channels(), config.channels(0), 1, 1, "encoder.from_input");
  for (int l = 0; l <= n; ++l) {
    m.encoder.emplace_back(config.channels(l), "encoder.block" + std::to_string(l));
    if (l < n) m.down.emplace_back(config.channels(l), config.channels(l + 1), "encoder.down" + std::to_string(l));
  }
  m.skip_norm.resize(n);
  m.dec_a.resize(n + 1);
  m.dec_b.resize(n + 1);
  for (int l = n; l >= 0; --l) {
    const int in = l == n ? config.channels(n) : config.channels(l + 1);
    m.dec_a[l] = StyledConv<T>(in, config.channels(l), config.w_dim, "decoder.level" + std::to_string(l) + ".conv0");
    m.dec_b[l] = StyledConv<T>(config.channels(l), config.channels(l), config.w_dim,
                               "decoder.level" + std::to_string(l) + ".conv1");
  }
  m.to_rgb = nn::Conv2d<T>(config.channels(0), 3, 1, 1, "decoder.to_rgb");

  Rng rng(seed);
  for (auto& l : m.mapping) l.init(rng);
  m.from_input.init(rng);
  for (int l = 0; l <= n; ++l) {
    m.encoder[l].init(rng);
    if (l < n) m.down[l].conv.init(rng);
  }
  for (int l = n; l >= 0; --l) {
    m.dec_a[l].init(rng);
    m.dec_b[l].init(rng);
  }
  m.to_rgb.init(rng);
}

template <typename T>
Generator<T>::Generator(const Generator& other)
    : config_(other.config_), impl_(std::make_unique<Impl>(*other.impl_)) {}

template <typename T>
Generator<T>& Generator<T>::operator=(const Generator& other) {
  if (this != &other) {
    config_ = other.config_;
    impl_ = std::make_unique<Impl>(*other.impl_);
  }
  return *this;
}

template <typename T>
Generator<T>::~Generator() = default;

template <typename T>
nn::Tensor<T> Generator<T>::map_latent(const nn::Tensor<T>& z) {
  if (z.c() * z.h() * z.w() != config_.z_dim)
    throw ShapeError("map_latent: expected z of dim " + std::to_string(config_.z_dim) + ", got " + z.shape_string());
  Impl& m = *impl_;
  nn::Tensor<T> x = m.z_norm.forward(z.reshaped(z.n(), config_.z_dim, 1, 1));
  for (std::size_t i = 0; i < m.mapping.size(); ++i) x = m.mapping_act[i].forward(m.mapping[i].forward(x));
  return x;
}

template <typename T>
FeaturePyramid<T> Generator<T>::encode(const nn::Tensor<T>& masked_image, const nn::Tensor<T>& mask,
                                       const nn::Tensor<T>* condition) {
  const auto& c = config_;
  auto check = [&](const nn::Tensor<T>& t, int channels, const char* what) {
    if (t.c() != channels || t.h() != c.height || t.w() != c.width || t.n() != masked_image.n())
      throw ShapeError(std::string("encode: ") + what + " has shape " + t.shape_string());
  };
  check(masked_image, 3, "image");
  check(mask, 1, "mask");
  const bool wants_cond = c.condition == Conditioning::DenseEmbedding;
  if (wants_cond && (condition == nullptr || condition->empty()))
    throw ShapeError("encode: dense-conditioned generator requires a condition map");
  if (!wants_cond && condition != nullptr && !condition->empty())
    throw ShapeError("encode: unconditional generator does not accept a condition map");

  std::vector<const nn::Tensor<T>*> parts = {&masked_image, &mask};
  if (wants_cond) {
    check(*condition, c.embedding_channels, "condition");
    parts.push_back(condition);
  }
  Impl& m = *impl_;
  nn::Tensor<T> x = m.from_input_act.forward(m.from_input.forward(nn::concat_channels<T>(parts)));
  FeaturePyramid<T> pyramid;
  for (int l = 0; l <= c.n_downsamples; ++l) {
    pyramid.push_back(m.encoder[l].forward(x));
    if (l < c.n_downsamples) x = m.down[l].forward(pyramid.back());
  }
  return pyramid;
}

template <typename T>
nn::Tensor<T> Generator<T>::decode(const FeaturePyramid<T>& features, const nn::Tensor<T>& w) {
  const int n = config_.n_downsamples;
  if (static_cast<int>(features.size()) != n + 1) throw ShapeError("decode: pyramid depth mismatch");
  if (w.n() != features[0].n() || w.c() * w.h() * w.w() != config_.w_dim)
    throw ShapeError("decode: style has shape " + w.shape_string());
  Impl& m = *impl_;
  const nn::Tensor<T> style = w.reshaped(w.n(), config_.w_dim, 1, 1);
  m.batch = w.n();
  nn::Tensor<T> x = m.dec_b[n].forward(m.dec_a[n].forward(features[n], style), style);
  for (int l = n - 1; l >= 0; --l) {
    x = m.dec_a[l].forward(nn::upsample_nearest2x(x), style);
    x += m.skip_norm[l].forward(features[l]);
    x = m.dec_b[l].forward(x, style);
  }
  return m.out_act.forward(m.to_rgb.forward(x));
}

template <typename T>
nn::Tensor<T> Generator<T>::forward(const GeneratorBatch<T>& batch, const nn::Tensor<T>& z) {
  nn::Tensor<T> w = map_latent(z);
  nn::Tensor<T> out = forward_style(batch, w);
  impl_->used_mapping = true;
  return out;
}

template <typename T>
nn::Tensor<T> Generator<T>::forward_style(const GeneratorBatch<T>& batch, const nn::Tensor<T>& w) {
  if (!batch.mask.same_shape(nn::Tensor<T>(batch.image.n(), 1, batch.image.h(), batch.image.w())))
    throw ShapeError("generator: mask shape " + batch.mask.shape_string() + " vs image " + batch.image.shape_string());
  nn::Tensor<T> masked = batch.image;
  const std::size_t p = masked.plane_size();
  for (int n = 0; n < masked.n(); ++n)
    for (int c = 0; c < masked.c(); ++c) {
      T* d = masked.plane(n, c);
      const T* mk = batch.mask.plane(n, 0);
      for (std::size_t i = 0; i < p; ++i) d[i] *= mk[i];
    }
  const nn::Tensor<T>* cond = batch.condition.empty() ? nullptr : &batch.condition;
  FeaturePyramid<T> pyramid = encode(masked, batch.mask, cond);
  impl_->used_mapping = false;
  return decode(pyramid, w);
}

template <typename T>
nn::Tensor<T> Generator<T>::backward(const nn::Tensor<T>& grad_output) {
  Impl& m = *impl_;
  const int n = config_.n_downsamples;
  nn::Tensor<T> grad_w(m.batch, config_.w_dim, 1, 1);
  std::vector<nn::Tensor<T>> grad_features(n + 1);

  nn::Tensor<T> g = m.to_rgb.backward(m.out_act.backward(grad_output));
  for (int l = 0; l < n; ++l) {
    g = m.dec_b[l].backward(g, grad_w);
    grad_features[l] = m.skip_norm[l].backward(g);
    g = nn::upsample_nearest2x_backward(m.dec_a[l].backward(g, grad_w));
  }
  g = m.dec_a[n].backward(m.dec_b[n].backward(g, grad_w), grad_w);
  grad_features[n] = std::move(g);

  g = m.encoder[n].backward(grad_features[n]);
  for (int l = n - 1; l >= 0; --l) {
    g = m.down[l].backward(g);
    g += grad_features[l];
    g = m.encoder[l].backward(std::move(g));
  }
  m.from_input.backward(m.from_input_act.backward(g));

  if (m.used_mapping) {
    nn::Tensor<T> gm = grad_w;
    for (int i = static_cast<int>(m.mapping.size()) - 1; i >= 0; --i)
      gm = m.mapping[i].backward(m.mapping_act[i].backward(gm));
    m.z_norm.backward(gm);
  }
  return grad_w;
}

template <typename T>
nn::ParameterRefs<T> Generator<T>::parameters() {
  Impl& m = *impl_;
  nn::ParameterRefs<T> out;
  for (auto& l : m.mapping) l.parameters(out);
  m.from_input.parameters(out);
  for (int l = 0; l <= config_.n_downsamples; ++l) {
    m.encoder[l].parameters(out);
    if (l < config_.n_downsamples) m.down[l].conv.parameters(out);
  }
  for (int l = config_.n_downsamples; l >= 0; --l) {
    m.dec_a[l].parameters(out);
    m.dec_b[l].parameters(out);
  }
  m.to_rgb.parameters(out);
  return out;
}

template <typename T>
std::size_t Generator<T>::parameter_count() {
  return count_of<T>(parameters());
}

template <typename T>
std::vector<std::size_t> Generator<T>::parameters_per_level() {
  Impl& m = *impl_;
  const int n = config_.n_downsamples;
  std::vector<std::size_t> levels(n + 1, 0);
  auto add = [&](int level, auto& layer) {
    nn::ParameterRefs<T> refs;
    layer.parameters(refs);
    levels[level] += count_of<T>(refs);
  };
  add(0, m.from_input);
  add(0, m.to_rgb);
  for (int l = 0; l <= n; ++l) {
    add(l, m.encoder[l]);
    if (l < n) add(l + 1, m.down[l].conv);
    add(l, m.dec_a[l]);
    add(l, m.dec_b[l]);
  }
  return levels;
}

template <typename T>
void Generator<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

ImageTensor compose(const ImageTensor& original, const BinaryMask& keep_mask, const ImageTensor& generated) {
  if (!original.same_shape(generated) || original.height() != keep_mask.height() ||
      original.width() != keep_mask.width())
    throw ShapeError("compose: image/mask shapes differ");
  ImageTensor out = original;
  for (int y = 0; y < original.height(); ++y)
    for (int x = 0; x < original.width(); ++x)
      if (!keep_mask.at(y, x)) std::copy_n(generated.pixel(y, x), 3, out.pixel(y, x));
  return out;
}

template <typename T>
nn::Tensor<T> compose(const nn::Tensor<T>& original, const nn::Tensor<T>& keep_mask, const nn::Tensor<T>& generated) {
  if (!original.same_shape(generated) || keep_mask.n() != original.n() || keep_mask.c() != 1 ||
      keep_mask.h() != original.h() || keep_mask.w() != original.w())
    throw ShapeError("compose: tensor shapes differ");
  nn::Tensor<T> out = original;
  const std::size_t p = original.plane_size();
  for (int n = 0; n < original.n(); ++n) {
    const T* mk = keep_mask.plane(n, 0);
    for (int c = 0; c < original.c(); ++c) {
      const T* g = generated.plane(n, c);
      T* d = out.plane(n, c);
      for (std::size_t i = 0; i < p; ++i)
        if (mk[i] == T(0)) d[i] = g[i];
    }
  }
  return out;
}

template <typename T>
nn::Tensor<T> to_tensor(const ImageTensor& image) {
  nn::Tensor<T> t(1, 3, image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) t(0, c, y, x) = static_cast<T>(image.at(y, x, c));
  return t;
}

template <typename T>
nn::Tensor<T> to_tensor(const BinaryMask& mask) {
  nn::Tensor<T> t(1, 1, mask.height(), mask.width());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) t(0, 0, y, x) = mask.at(y, x) ? T(1) : T(0);
  return t;
}

template <typename T>
nn::Tensor<T> to_tensor(const EmbeddingMap& map) {
  nn::Tensor<T> t(1, map.channels(), map.height(), map.width());
  std::transform(map.values().begin(), map.values().end(), t.values().begin(),
                 [](float v) { return static_cast<T>(v); });
  return t;
}

template <typename T>
ImageTensor to_image(const nn::Tensor<T>& t, int index) {
  if (t.c() != 3 || index < 0 || index >= t.n()) throw ShapeError("to_image: expected (N,3,H,W)");
  ImageTensor img(t.h(), t.w());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(t(index, c, y, x));
  return img;
}

nn::Tensor<float> to_tensor(const LatentCode& z) {
  nn::Tensor<float> t(1, static_cast<int>(z.z.size()), 1, 1);
  std::copy(z.z.begin(), z.z.end(), t.values().begin());
  return t;
}

nn::Tensor<float> to_tensor(const StyleVector& w) {
  nn::Tensor<float> t(1, static_cast<int>(w.w.size()), 1, 1);
  std::transform(w.w.begin(), w.w.end(), t.values().begin(), [](double v) { return static_cast<float>(v); });
  return t;
}

namespace {

GeneratorBatch<float> single_batch(const GeneratorConfig& cfg, const ImageTensor& original,
                                   const BinaryMask& keep_mask, const EmbeddingMap* condition) {
  if (original.height() != cfg.height || original.width() != cfg.width)
    throw ShapeError("synthesize: image is " + std::to_string(original.height()) + "x" +
                     std::to_string(original.width()) + ", generator expects " + std::to_string(cfg.height) + "x" +
                     std::to_string(cfg.width));
  GeneratorBatch<float> b{to_tensor<float>(original), to_tensor<float>(keep_mask), {}};
  if (condition != nullptr) b.condition = to_tensor<float>(*condition);
  return b;
}

}  // namespace

ImageTensor synthesize(Generator<float>& generator, const ImageTensor& original, const BinaryMask& keep_mask,
                       const EmbeddingMap* condition, const LatentCode& z) {
  return synthesize_style(generator, original, keep_mask, condition, map_latent(generator, z));
}

ImageTensor synthesize_style(Generator<float>& generator, const ImageTensor& original, const BinaryMask& keep_mask,
                             const EmbeddingMap* condition, const StyleVector& w) {
  const GeneratorBatch<float> b = single_batch(generator.config(), original, keep_mask, condition);
  const nn::Tensor<float> raw = generator.forward_style(b, to_tensor(w));
  return compose(original, keep_mask, to_image(raw));
}

StyleVector map_latent(Generator<float>& generator, const LatentCode& z) {
  const nn::Tensor<float> w = generator.map_latent(to_tensor(z));
  return StyleVector{std::vector<double>(w.values().begin(), w.values().end())};
}

#define REALANON_INSTANTIATE(T)                                                                         \
  template class Generator<T>;                                                                          \
  template nn::Tensor<T> compose<T>(const nn::Tensor<T>&, const nn::Tensor<T>&, const nn::Tensor<T>&); \
  template nn::Tensor<T> to_tensor<T>(const ImageTensor&);                                              \
  template nn::Tensor<T> to_tensor<T>(const BinaryMask&);                                               \
  template nn::Tensor<T> to_tensor<T>(const EmbeddingMap&);                                             \
  template ImageTensor to_image<T>(const nn::Tensor<T>&, int);

REALANON_INSTANTIATE(float)
REALANON_INSTANTIATE(double)
#undef REALANON_INSTANTIATE

}  // namespace realanon
