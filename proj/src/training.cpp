#include "realanon/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "realanon/checkpoint.hpp"
#include "realanon/errors.hpp"
#include "realanon/io.hpp"

namespace realanon {

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.generator = GeneratorConfig::toy_body(Conditioning::DenseEmbedding);
  c.batch_size = 8;
  c.r1_gamma = 0.5;
  c.ema_decay = 0.995;
  c.steps = 2000;
  return c;
}

void TrainConfig::validate() const {
  generator.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr > 0) || !(epsilon > 0)) throw ConfigError("lr and epsilon must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
  if (r1_gamma < 0 || r1_interval < 0) throw ConfigError("r1 settings must be non-negative");
  if (ema_decay < 0 || ema_decay > 1) throw ConfigError("ema_decay must lie in [0, 1]");
  if (steps < 0) throw ConfigError("steps must be non-negative");
}

Json to_json(const TrainConfig& c) {
  return {{"generator", to_json(c.generator)},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"loss", c.loss == GanLoss::Hinge ? "hinge" : "nonsaturating"},
          {"r1_gamma", c.r1_gamma},
          {"r1_interval", c.r1_interval},
          {"ema_decay", c.ema_decay},
          {"horizontal_flip", c.horizontal_flip},
          {"steps", c.steps},
          {"seed", c.seed},
          {"log_every", c.log_every}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  if (j.contains("generator")) c.generator = generator_config_from_json(j.at("generator"));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  const std::string loss = j.value("loss", std::string("nonsaturating"));
  if (loss == "hinge") c.loss = GanLoss::Hinge;
  else if (loss == "nonsaturating") c.loss = GanLoss::NonSaturating;
  else throw ConfigError("unknown loss: " + loss);
  c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
  c.r1_interval = j.value("r1_interval", c.r1_interval);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  c.validate();
  return c;
}

TrainConfig parse_train_config(const std::string& text) {
  Json j = Json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto colon = line.find(':');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (colon == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key: value");
    const std::string key = trim(line.substr(0, colon));
    const std::string raw = trim(line.substr(colon + 1));
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const Json::exception&) {
      value = raw;  // bare word
    }
    if (key == "preset") {
      if (raw == "toy") j.update(to_json(TrainConfig::toy()), true);
      else if (raw == "full") j.update(to_json(TrainConfig::full()), true);
      else throw ConfigError("unknown preset: " + raw);
    } else if (key.rfind("generator.", 0) == 0) {
      j["generator"][key.substr(10)] = value;
    } else {
      j[key] = value;
    }
  }
  return train_config_from_json(j);
}

TrainingSample ToyDataSource::sample(std::size_t index) const {
  ToyFigure f = data_[index];
  return {std::move(f.image), std::move(f.region), std::move(f.embedding)};
}

DirectoryDataSource::DirectoryDataSource(const std::string& dir) : dir_(dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.jsonl");
  if (!in) throw IoError("missing manifest.jsonl in " + dir);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = Json::parse(line);
    entries_.push_back({j.at("image").get<std::string>(), j.at("mask").get<std::string>(), j.value("embedding", "")});
  }
  if (entries_.empty()) throw IoError("empty manifest in " + dir);
}

TrainingSample DirectoryDataSource::sample(std::size_t index) const {
  const Entry& e = entries_.at(index);
  const auto path = [&](const std::string& f) { return (std::filesystem::path(dir_) / f).string(); };
  TrainingSample s;
  s.image = io::load_image(path(e.image));
  s.region = io::load_mask(path(e.mask));
  if (!e.embedding.empty()) s.embedding = io::load_npy_embedding(path(e.embedding));
  return s;
}

void HorizontalFlip::apply(TrainingSample& s, Rng& rng) const {
  if (rng.uniform() >= 0.5) return;
  s.image = flip_horizontal(s.image);
  s.region = flip_horizontal(s.region);
  if (!s.embedding.empty()) s.embedding = flip_horizontal(s.embedding);
}

AugmentationPipeline AugmentationPipeline::from_config(const TrainConfig& config) {
  AugmentationPipeline p;
  if (config.horizontal_flip) p.add(std::make_unique<HorizontalFlip>());
  return p;
}

std::vector<std::string> AugmentationPipeline::names() const {
  std::vector<std::string> out;
  for (const auto& s : stages_) out.push_back(s->name());
  return out;
}

void AugmentationPipeline::apply(TrainingSample& sample, Rng& rng) const {
  for (const auto& s : stages_) s->apply(sample, rng);
}

Json to_json(const StepResult& r) {
  Json j = {{"step", r.step},
            {"d_loss", r.d_loss},
            {"g_loss", r.g_loss},
            {"logit_real", r.logit_real},
            {"logit_fake", r.logit_fake}};
  if (r.r1) j["r1"] = *r.r1;
  if (r.eval_metric) j["fid_eval"] = *r.eval_metric;
  return j;
}

template <typename T>
void ema_update(const nn::ParameterRefs<T>& current, const nn::ParameterRefs<T>& ema, double decay) {
  if (current.size() != ema.size()) throw ShapeError("ema_update: parameter lists differ");
  if (decay < 0 || decay > 1) throw ConfigError("ema_update: decay must lie in [0, 1]");
  const T a = static_cast<T>(decay), b = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < current.size(); ++i) {
    auto& e = ema[i]->value;
    const auto& c = current[i]->value;
    if (e.size() != c.size()) throw ShapeError("ema_update: shape mismatch for " + current[i]->name);
    if (decay == 1.0) continue;
    if (decay == 0.0) {
      e = c;
      continue;
    }
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = a * e[k] + b * c[k];
  }
}

template void ema_update<float>(const nn::ParameterRefs<float>&, const nn::ParameterRefs<float>&, double);
template void ema_update<double>(const nn::ParameterRefs<double>&, const nn::ParameterRefs<double>&, double);

void ema_update(Generator<float>& current, Generator<float>& ema, double decay) {
  ema_update<float>(current.parameters(), ema.parameters(), decay);
}

template <typename T>
double r1_penalty_backward(Discriminator<T>& d, const nn::Tensor<T>& real, const nn::Tensor<T>& mask,
                           const nn::Tensor<T>& condition, double weight) {
  auto params = d.parameters();
  std::vector<std::vector<T>> saved;
  saved.reserve(params.size());
  for (auto* p : params) saved.push_back(p->grad);

  const nn::Tensor<T> logits = d.forward(real, mask, condition);
  const nn::Tensor<T> ones(logits.n(), 1, 1, 1, T(1));
  d.zero_grad();
  const nn::Tensor<T> g = d.backward(ones);

  double sq = 0;
  for (T v : g.values()) sq += static_cast<double>(v) * v;
  const double mean_sq = sq / real.n();
  const double rms = std::sqrt(sq / static_cast<double>(g.size()));

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved[i];
  if (rms == 0 || weight == 0) return mean_sq;

  // Step along g relative to its RMS. Large enough to stay clear of float
  // round-off, small enough to rarely cross a leaky-ReLU kink in double.
  const double rel_step = std::is_same_v<T, float> ? 1e-3 : 1e-6;
  const double eps = rel_step / rms;
  auto grads_at = [&](double sign) {
    nn::Tensor<T> x = real;
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += static_cast<T>(sign * eps) * g[k];
    d.forward(x, mask, condition);
    d.zero_grad();
    d.backward(ones);
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (auto* p : params) out.push_back(p->grad);
    return out;
  };
  const auto plus = grads_at(+1), minus = grads_at(-1);
  const double scale = weight / (2 * eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& gr = params[i]->grad;
    gr = saved[i];
    for (std::size_t k = 0; k < gr.size(); ++k)
      gr[k] += static_cast<T>(scale * (static_cast<double>(plus[i][k]) - minus[i][k]));
  }
  return mean_sq;
}

template double r1_penalty_backward<float>(Discriminator<float>&, const nn::Tensor<float>&, const nn::Tensor<float>&,
                                           const nn::Tensor<float>&, double);
template double r1_penalty_backward<double>(Discriminator<double>&, const nn::Tensor<double>&,
                                            const nn::Tensor<double>&, const nn::Tensor<double>&, double);

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double mean(const nn::Tensor<float>& t) {
  double s = 0;
  for (float v : t.values()) s += v;
  return t.size() ? s / static_cast<double>(t.size()) : 0.0;
}

nn::AdamOptions adam_options(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.epsilon}; }

}  // namespace

Trainer::Trainer(TrainConfig config, std::shared_ptr<const DataSource> data)
    : config_((config.validate(), std::move(config))),
      data_(std::move(data)),
      augment_(AugmentationPipeline::from_config(config_)),
      g_(config_.generator, mix_seed(config_.seed, 1)),
      g_ema_(g_),
      d_(DiscriminatorConfig::matching(config_.generator), mix_seed(config_.seed, 2)),
      g_opt_(g_.parameters(), adam_options(config_)),
      d_opt_(d_.parameters(), adam_options(config_)),
      rng_(mix_seed(config_.seed, 3)) {
  if (!data_ || data_->size() == 0) throw ConfigError("trainer needs a non-empty data source");
}

TrainingBatch Trainer::next_batch() {
  const GeneratorConfig& gc = config_.generator;
  const int n = config_.batch_size, h = gc.height, w = gc.width;
  const bool cond = gc.condition == Conditioning::DenseEmbedding;
  TrainingBatch b;
  b.data.image = nn::Tensor<float>(n, 3, h, w);
  b.data.mask = nn::Tensor<float>(n, 1, h, w);
  if (cond) b.data.condition = nn::Tensor<float>(n, gc.embedding_channels, h, w);
  for (int i = 0; i < n; ++i) {
    const auto index = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(data_->size()) - 1));
    TrainingSample s = data_->sample(index);
    augment_.apply(s, rng_);
    if (s.image.height() != h || s.image.width() != w || !s.region.same_shape(BinaryMask(h, w)))
      throw ShapeError("training sample does not match the generator resolution");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t o = static_cast<std::size_t>(y) * w + x;
        for (int c = 0; c < 3; ++c) b.data.image.plane(i, c)[o] = s.image.at(y, x, c);
        b.data.mask.plane(i, 0)[o] = s.region.at(y, x) ? 0.f : 1.f;
      }
    if (cond) {
      if (s.embedding.channels() != gc.embedding_channels || s.embedding.height() != h || s.embedding.width() != w)
        throw ShapeError("training sample lacks a matching embedding");
      std::copy(s.embedding.values().begin(), s.embedding.values().end(), b.data.condition.plane(i, 0));
    }
  }
  b.z = nn::Tensor<float>(n, gc.z_dim, 1, 1);
  for (auto& v : b.z.values()) v = static_cast<float>(rng_.normal());
  return b;
}

StepResult Trainer::step() {
  const TrainingBatch batch = next_batch();
  const auto& x = batch.data.image;
  const auto& m = batch.data.mask;
  const auto& c = batch.data.condition;
  const int n = x.n();
  const bool hinge = config_.loss == GanLoss::Hinge;
  StepResult res;
  res.step = step_;

  const nn::Tensor<float> raw = g_.forward(batch.data, batch.z);
  const nn::Tensor<float> fake = compose(x, m, raw);

  // Discriminator update.
  d_opt_.zero_grad();
  if (config_.r1_interval > 0 && config_.r1_gamma > 0 && step_ % config_.r1_interval == 0) {
    const double weight = config_.r1_gamma * config_.r1_interval / n;
    res.r1 = r1_penalty_backward(d_, x, m, c, weight);
  }
  const nn::Tensor<float> lr = d_.forward(x, m, c);
  nn::Tensor<float> grad(n, 1, 1, 1);
  double d_loss = 0;
  for (int i = 0; i < n; ++i) {
    const double l = lr[i];
    d_loss += hinge ? std::max(0.0, 1 - l) : softplus(-l);
    grad[i] = static_cast<float>((hinge ? (l < 1 ? -1.0 : 0.0) : -sigmoid(-l)) / n);
  }
  d_.backward(grad);
  const nn::Tensor<float> lf = d_.forward(fake, m, c);
  for (int i = 0; i < n; ++i) {
    const double l = lf[i];
    d_loss += hinge ? std::max(0.0, 1 + l) : softplus(l);
    grad[i] = static_cast<float>((hinge ? (l > -1 ? 1.0 : 0.0) : sigmoid(l)) / n);
  }
  d_.backward(grad);
  res.d_loss = d_loss / n;
  res.logit_real = mean(lr);
  res.logit_fake = mean(lf);
  if (!std::isfinite(res.d_loss)) {
    throw NumericalError("non-finite discriminator loss; snapshot: " + to_json(res).dump());
  }
  d_opt_.step();

  // Generator update through the refreshed discriminator.
  const nn::Tensor<float> lg = d_.forward(fake, m, c);
  double g_loss = 0;
  for (int i = 0; i < n; ++i) {
    const double l = lg[i];
    g_loss += hinge ? -l : softplus(-l);
    grad[i] = static_cast<float>((hinge ? -1.0 : -sigmoid(-l)) / n);
  }
  res.g_loss = g_loss / n;
  if (!std::isfinite(res.g_loss)) {
    throw NumericalError("non-finite generator loss; snapshot: " + to_json(res).dump());
  }
  nn::Tensor<float> grad_raw = d_.backward(grad);
  for (std::size_t k = 0; k < grad_raw.size(); ++k) {
    const std::size_t plane = grad_raw.plane_size();
    const std::size_t sample = k / (3 * plane);
    grad_raw[k] *= 1.f - m[sample * plane + k % plane];
  }
  g_opt_.zero_grad();
  g_.backward(grad_raw);
  g_opt_.step();
  ema_update(g_, g_ema_, config_.ema_decay);
  ++step_;
  return res;
}

void Trainer::save(const std::string& path) {
  Checkpoint ckpt;
  ckpt.header["kind"] = "training";
  ckpt.header["step"] = step_;
  ckpt.header["train"] = to_json(config_);
  ckpt.header["generator"] = to_json(config_.generator);
  ckpt.header["discriminator"] = to_json(d_.config());
  ckpt.header["rng_state"] = rng_.state();
  ckpt.header["g_adam_steps"] = g_opt_.steps();
  ckpt.header["d_adam_steps"] = d_opt_.steps();
  store_parameters(ckpt, "G", g_.parameters());
  store_parameters(ckpt, "G_ema", g_ema_.parameters());
  store_parameters(ckpt, "D", d_.parameters());
  auto store_moments = [&](const std::string& group, nn::Adam<float>& opt) {
    const auto& params = opt.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.blobs[group + "_m/" + params[i]->name] = opt.first_moments()[i];
      ckpt.blobs[group + "_v/" + params[i]->name] = opt.second_moments()[i];
    }
  };
  store_moments("G_adam", g_opt_);
  store_moments("D_adam", d_opt_);
  write_checkpoint(path, ckpt);
}

std::unique_ptr<Trainer> Trainer::resume(const std::string& path, std::shared_ptr<const DataSource> data) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.header.value("kind", "") != "training") throw IoError("not a training checkpoint: " + path);
  auto t = std::make_unique<Trainer>(train_config_from_json(ckpt.header.at("train")), std::move(data));
  load_parameters(ckpt, "G", t->g_.parameters());
  load_parameters(ckpt, "G_ema", t->g_ema_.parameters());
  load_parameters(ckpt, "D", t->d_.parameters());
  auto load_moments = [&](const std::string& group, nn::Adam<float>& opt) {
    const auto& params = opt.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& m = ckpt.blobs.at(group + "_m/" + params[i]->name);
      const auto& v = ckpt.blobs.at(group + "_v/" + params[i]->name);
      if (m.size() != params[i]->size() || v.size() != params[i]->size())
        throw ShapeError("optimizer state size mismatch for " + params[i]->name);
      opt.first_moments()[i] = m;
      opt.second_moments()[i] = v;
    }
  };
  load_moments("G_adam", t->g_opt_);
  load_moments("D_adam", t->d_opt_);
  t->g_opt_.set_steps(ckpt.header.at("g_adam_steps").get<std::int64_t>());
  t->d_opt_.set_steps(ckpt.header.at("d_adam_steps").get<std::int64_t>());
  t->rng_.set_state(ckpt.header.at("rng_state").get<std::string>());
  t->step_ = ckpt.header.at("step").get<std::int64_t>();
  return t;
}

MetricsLog::MetricsLog(const std::string& path) : path_(path) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot open metrics log: " + path_);
}

void MetricsLog::append(const Json& record) {
  std::ofstream out(path_, std::ios::app);
  out << record.dump() << '\n';
  if (!out) throw IoError("cannot append to metrics log: " + path_);
}

OverfittingReport monitor_overfitting(const std::vector<EvalPoint>& history, std::size_t window) {
  OverfittingReport r;
  if (history.size() < 2) {
    r.reason = "fewer than two evaluation points";
    return r;
  }
  window = std::clamp<std::size_t>(window, 2, history.size());
  const std::size_t first = history.size() - window;
  bool gap_monotone = true;
  for (std::size_t i = first + 1; i < history.size(); ++i)
    if (history[i].logit_gap < history[i - 1].logit_gap) gap_monotone = false;
  r.gap_change = history.back().logit_gap - history[first].logit_gap;
  r.metric_change = history.back().metric - history[first].metric;
  r.diverging = gap_monotone && r.gap_change > 0 && r.metric_change > 0;
  if (r.diverging) r.reason = "logit gap growing while the evaluation metric worsens";
  else if (!gap_monotone || r.gap_change <= 0) r.reason = "logit gap not growing";
  else r.reason = "evaluation metric not worsening";
  return r;
}

}  // namespace realanon
