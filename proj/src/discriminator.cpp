#include "realanon/discriminator.hpp"

#include "realanon/errors.hpp"
#include "realanon/rng.hpp"

namespace realanon {

DiscriminatorConfig DiscriminatorConfig::matching(const GeneratorConfig& g) {
  DiscriminatorConfig d;
  d.height = g.height;
  d.width = g.width;
  d.n_downsamples = g.n_downsamples;
  d.condition = g.condition;
  d.base_channels = g.base_channels;
  d.max_channels = g.max_channels;
  d.embedding_channels = g.embedding_channels;
  return d;
}

int DiscriminatorConfig::channels(int level) const {
  long c = base_channels;
  for (int i = 0; i < level && c < max_channels; ++i) c *= 2;
  return static_cast<int>(std::min<long>(c, max_channels));
}

int DiscriminatorConfig::input_channels() const {
  return 4 + (condition == Conditioning::DenseEmbedding ? embedding_channels : 0);
}

void DiscriminatorConfig::validate() const {
  const int f = 1 << n_downsamples;
  if (height <= 0 || width <= 0 || height % f || width % f) throw ConfigError("discriminator: invalid resolution");
  if (base_channels <= 0 || max_channels < base_channels) throw ConfigError("discriminator: invalid channels");
}

namespace {

template <typename T>
struct ResidualDown {
  nn::Conv2d<T> conv0, conv1, skip;
  nn::LeakyRelu<T> act0, act1;

  ResidualDown() = default;
  ResidualDown(int in, int out, const std::string& name)
      : conv0(in, in, 3, 1, name + ".conv0"), conv1(in, out, 3, 2, name + ".conv1"), skip(in, out, 1, 2, name + ".skip", false) {}

  void init(Rng& rng) {
    conv0.init(rng);
    conv1.init(rng);
    skip.init(rng);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x) {
    nn::Tensor<T> h = act1.forward(conv1.forward(act0.forward(conv0.forward(x))));
    h += skip.forward(x);
    h *= T(0.70710678118654752440);
    return h;
  }

  nn::Tensor<T> backward(nn::Tensor<T> g) {
    g *= T(0.70710678118654752440);
    nn::Tensor<T> gx = conv0.backward(act0.backward(conv1.backward(act1.backward(g))));
    gx += skip.backward(g);
    return gx;
  }

  void parameters(nn::ParameterRefs<T>& out) {
    conv0.parameters(out);
    conv1.parameters(out);
    skip.parameters(out);
  }
};

}  // namespace

template <typename T>
struct Discriminator<T>::Impl {
  nn::Conv2d<T> from_input;
  nn::LeakyRelu<T> from_input_act;
  std::vector<ResidualDown<T>> blocks;
  nn::Conv2d<T> final_conv;
  nn::LeakyRelu<T> final_act;
  nn::Linear<T> fc;
  nn::LeakyRelu<T> fc_act;
  nn::Linear<T> out;
  int n = 0, c = 0, h = 0, w = 0;  // shape entering the flatten
};

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config.validate();
  Impl& m = *impl_;
  const int nd = config.n_downsamples;
  m.from_input = nn::Conv2d<T>(config.input_channels(), config.channels(0), 1, 1, "disc.from_input");
  for (int l = 0; l < nd; ++l)
    m.blocks.emplace_back(config.channels(l), config.channels(l + 1), "disc.block" + std::to_string(l));
  const int cn = config.channels(nd);
  m.final_conv = nn::Conv2d<T>(cn, cn, 3, 1, "disc.final_conv");
  const int flat = cn * (config.height >> nd) * (config.width >> nd);
  m.fc = nn::Linear<T>(flat, cn, "disc.fc");
  m.out = nn::Linear<T>(cn, 1, "disc.out");
  Rng rng(seed);
  m.from_input.init(rng);
  for (auto& b : m.blocks) b.init(rng);
  m.final_conv.init(rng);
  m.fc.init(rng);
  m.out.init(rng);
}

template <typename T>
Discriminator<T>::Discriminator(const Discriminator& other)
    : config_(other.config_), impl_(std::make_unique<Impl>(*other.impl_)) {}

template <typename T>
Discriminator<T>::~Discriminator() = default;

template <typename T>
nn::Tensor<T> Discriminator<T>::forward(const nn::Tensor<T>& image, const nn::Tensor<T>& mask,
                                        const nn::Tensor<T>& condition) {
  if (image.c() != 3 || image.h() != config_.height || image.w() != config_.width)
    throw ShapeError("discriminator: image shape " + image.shape_string());
  std::vector<const nn::Tensor<T>*> parts = {&image, &mask};
  if (config_.condition == Conditioning::DenseEmbedding) {
    if (condition.empty()) throw ShapeError("discriminator: condition required");
    parts.push_back(&condition);
  }
  Impl& m = *impl_;
  nn::Tensor<T> x = m.from_input_act.forward(m.from_input.forward(nn::concat_channels<T>(parts)));
  for (auto& b : m.blocks) x = b.forward(x);
  x = m.final_act.forward(m.final_conv.forward(x));
  m.n = x.n();
  m.c = x.c();
  m.h = x.h();
  m.w = x.w();
  x = m.fc_act.forward(m.fc.forward(x.reshaped(x.n(), x.c() * x.h() * x.w(), 1, 1)));
  return m.out.forward(x);
}

template <typename T>
nn::Tensor<T> Discriminator<T>::backward(const nn::Tensor<T>& grad_logits) {
  Impl& m = *impl_;
  nn::Tensor<T> g = m.fc.backward(m.fc_act.backward(m.out.backward(grad_logits)));
  g = m.final_conv.backward(m.final_act.backward(g.reshaped(m.n, m.c, m.h, m.w)));
  for (int l = static_cast<int>(m.blocks.size()) - 1; l >= 0; --l) g = m.blocks[l].backward(std::move(g));
  g = m.from_input.backward(m.from_input_act.backward(g));
  return nn::slice_channels(g, 0, 3);
}

template <typename T>
nn::ParameterRefs<T> Discriminator<T>::parameters() {
  Impl& m = *impl_;
  nn::ParameterRefs<T> out;
  m.from_input.parameters(out);
  for (auto& b : m.blocks) b.parameters(out);
  m.final_conv.parameters(out);
  m.fc.parameters(out);
  m.out.parameters(out);
  return out;
}

template <typename T>
void Discriminator<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace realanon
