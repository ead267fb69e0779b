#include "realanon/latent_edit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "realanon/errors.hpp"
#include "realanon/nn/optim.hpp"
#include "realanon/rng.hpp"

namespace realanon {

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::size_t TruncationCenters::nearest(const StyleVector& w) const {
  if (centers.empty()) throw ConfigError("no truncation centers");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (centers[i].w.size() != w.w.size()) throw ShapeError("style dimension mismatch");
    const double d = squared_distance(centers[i].w, w.w);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

TruncationCenters fit_centers(std::span<const StyleVector> samples, int k, std::uint64_t seed, int max_iters) {
  if (k < 1) throw ConfigError("fit_centers: k must be at least 1");
  if (samples.size() < static_cast<std::size_t>(k)) throw ConfigError("fit_centers: fewer samples than centers");
  const std::size_t dim = samples.front().w.size();
  for (const auto& s : samples)
    if (s.w.size() != dim) throw ShapeError("fit_centers: style dimension mismatch");

  // k-means++ seeding.
  Rng rng(seed);
  TruncationCenters c;
  std::vector<double> dist(samples.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(samples.size(), false);
  std::size_t first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(samples.size()) - 1));
  c.centers.push_back(samples[first]);
  chosen[first] = true;
  while (c.k() < k) {
    double total = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      dist[i] = std::min(dist[i], squared_distance(samples[i].w, c.centers.back().w));
      total += chosen[i] ? 0.0 : dist[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (chosen[i]) continue;
        pick = i;
        r -= dist[i];
        if (r < 0) break;
      }
    } else {
      while (chosen[pick]) ++pick;  // all remaining samples coincide with centers
    }
    chosen[pick] = true;
    c.centers.push_back(samples[pick]);
  }

  // Lloyd iterations.
  std::vector<std::size_t> assign(samples.size(), std::numeric_limits<std::size_t>::max());
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t a = c.nearest(samples[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += samples[i].w[d];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;  // keep an empty cluster's previous center
      for (std::size_t d = 0; d < dim; ++d) c.centers[j].w[d] = sums[j][d] / static_cast<double>(counts[j]);
    }
  }
  return c;
}

TruncationCenters fit_centers(Generator<float>& generator, int n_samples, int k, std::uint64_t seed) {
  std::vector<StyleVector> ws;
  ws.reserve(static_cast<std::size_t>(n_samples));
  const int zd = generator.config().z_dim;
  const int chunk = 256;
  for (int start = 0; start < n_samples; start += chunk) {
    const int n = std::min(chunk, n_samples - start);
    nn::Tensor<float> z(n, zd, 1, 1);
    for (int i = 0; i < n; ++i) {
      const LatentCode code = LatentCode::sample(zd, mix_seed(seed, static_cast<std::uint64_t>(start + i)));
      std::copy(code.z.begin(), code.z.end(), z.plane(i, 0));
    }
    const nn::Tensor<float> w = generator.map_latent(z);
    for (int i = 0; i < n; ++i) ws.push_back({std::vector<double>(w.plane(i, 0), w.plane(i, 0) + w.c())});
  }
  return fit_centers(ws, k, seed);
}

StyleVector truncate(const StyleVector& w, const TruncationCenters& centers, double psi) {
  if (!(psi >= 0 && psi <= 1)) throw ConfigError("truncation psi must lie in [0, 1]");
  const StyleVector& c = centers.centers[centers.nearest(w)];
  StyleVector out = w;
  for (std::size_t i = 0; i < out.w.size(); ++i) out.w[i] = c.w[i] + psi * (w.w[i] - c.w[i]);
  return out;
}

double EditDirection::norm() const {
  return std::sqrt(std::inner_product(direction.begin(), direction.end(), direction.begin(), 0.0));
}

StyleVector apply_direction(const StyleVector& w, const EditDirection& d, double strength) {
  if (d.direction.size() != w.w.size()) throw ShapeError("edit direction dimension mismatch");
  StyleVector out = w;
  for (std::size_t i = 0; i < out.w.size(); ++i) out.w[i] += strength * d.direction[i];
  return out;
}

void save_directions(const std::string& path, const std::vector<EditDirection>& directions) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : directions) j.push_back({{"name", d.name}, {"direction", d.direction}});
  std::ofstream out(path);
  out << nlohmann::json{{"directions", j}}.dump();
  if (!out) throw IoError("cannot write directions file: " + path);
}

std::vector<EditDirection> load_directions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read directions file: " + path);
  std::vector<EditDirection> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& d : j.at("directions"))
      out.push_back({d.at("name").get<std::string>(), d.at("direction").get<std::vector<double>>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed directions file " + path + ": " + e.what());
  }
  return out;
}

void save_centers(const std::string& path, const TruncationCenters& centers) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : centers.centers) j.push_back(c.w);
  std::ofstream out(path);
  out << nlohmann::json{{"centers", j}}.dump();
  if (!out) throw IoError("cannot write centers file: " + path);
}

TruncationCenters load_centers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read centers file: " + path);
  TruncationCenters c;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& v : j.at("centers")) c.centers.push_back({v.get<std::vector<double>>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed centers file " + path + ": " + e.what());
  }
  return c;
}

namespace {

/// Per-channel weights of the synthetic prompt; score = mean over pixels of sum_c weight_c * value_c.
std::array<double, 3> prompt_weights(const std::string& prompt) {
  const double third = 1.0 / 3.0;
  if (prompt == "bright") return {third, third, third};
  if (prompt == "dark") return {-third, -third, -third};
  if (prompt == "red") return {1, -0.5, -0.5};
  if (prompt == "green") return {-0.5, 1, -0.5};
  if (prompt == "blue") return {-0.5, -0.5, 1};
  throw ConfigError("synthetic scorer does not understand prompt '" + prompt + "'");
}

}  // namespace

bool SyntheticScorer::supports(const std::string& prompt) {
  return prompt == "bright" || prompt == "dark" || prompt == "red" || prompt == "green" || prompt == "blue";
}

double SyntheticScorer::score(const ImageTensor& image, const std::string& prompt) const {
  const auto wts = prompt_weights(prompt);
  if (image.empty()) throw ShapeError("cannot score an empty image");
  double s = 0;
  const auto v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) s += wts[i % 3] * v[i];
  return s / static_cast<double>(image.height() * image.width());
}

ImageTensor SyntheticScorer::gradient(const ImageTensor& image, const std::string& prompt) const {
  const auto wts = prompt_weights(prompt);
  ImageTensor g(image.height(), image.width());
  const double inv = 1.0 / static_cast<double>(image.height() * image.width());
  auto v = g.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(wts[i % 3] * inv);
  return g;
}

EditDirection find_global_direction(Generator<float>& generator, const ImageScorer& scorer, const std::string& prompt,
                                    const DataSource& conditions, const DirectionSearchOptions& o) {
  if (o.n_images < 1) throw ConfigError("find_global_direction: n_images must be at least 1");
  if (o.steps < 0 || o.batch_size < 1 || o.strength_schedule.empty())
    throw ConfigError("find_global_direction: invalid options");
  const GeneratorConfig& gc = generator.config();
  const bool cond = gc.condition == Conditioning::DenseEmbedding;
  const int wd = gc.w_dim;
  Rng rng(o.seed);

  // Sampled conditions, their styles and unedited syntheses.
  struct Item {
    TrainingSample sample;
    BinaryMask keep;
    StyleVector w;
    ImageTensor base;
  };
  std::vector<Item> items;
  for (int i = 0; i < o.n_images; ++i) {
    Item it;
    it.sample = conditions.sample(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(conditions.size()) - 1)));
    if (it.sample.image.height() != gc.height || it.sample.image.width() != gc.width)
      throw ShapeError("find_global_direction: condition resolution differs from the generator");
    it.keep = it.sample.region.inverted();
    it.w = map_latent(generator, LatentCode::sample(gc.z_dim, mix_seed(o.seed, static_cast<std::uint64_t>(i))));
    items.push_back(std::move(it));
  }

  auto make_batch = [&](std::size_t begin, std::size_t end, const std::vector<double>& d, double s) {
    const int n = static_cast<int>(end - begin);
    GeneratorBatch<float> b;
    b.image = nn::Tensor<float>(n, 3, gc.height, gc.width);
    b.mask = nn::Tensor<float>(n, 1, gc.height, gc.width);
    if (cond) b.condition = nn::Tensor<float>(n, gc.embedding_channels, gc.height, gc.width);
    nn::Tensor<float> w(n, wd, 1, 1);
    for (int i = 0; i < n; ++i) {
      const Item& it = items[begin + i];
      const auto img = to_tensor<float>(it.sample.image);
      const auto msk = to_tensor<float>(it.keep);
      std::copy(img.values().begin(), img.values().end(), b.image.plane(i, 0));
      std::copy(msk.values().begin(), msk.values().end(), b.mask.plane(i, 0));
      if (cond) {
        const auto e = to_tensor<float>(it.sample.embedding);
        std::copy(e.values().begin(), e.values().end(), b.condition.plane(i, 0));
      }
      for (int k = 0; k < wd; ++k) w.plane(i, 0)[k] = static_cast<float>(it.w.w[k] + s * d[k]);
    }
    return std::make_pair(std::move(b), std::move(w));
  };

  const std::vector<double> zero(static_cast<std::size_t>(wd), 0.0);
  for (std::size_t b0 = 0; b0 < items.size(); b0 += static_cast<std::size_t>(o.batch_size)) {
    const std::size_t b1 = std::min(items.size(), b0 + static_cast<std::size_t>(o.batch_size));
    auto [batch, w] = make_batch(b0, b1, zero, 0.0);
    const nn::Tensor<float> raw = generator.forward_style(batch, w);
    for (std::size_t i = b0; i < b1; ++i)
      items[i].base = compose(items[i].sample.image, items[i].keep, to_image(raw, static_cast<int>(i - b0)));
  }

  nn::Parameter<double> d("direction", {wd});
  nn::AdamOptions adam_opts;
  adam_opts.learning_rate = o.learning_rate;
  adam_opts.beta1 = 0.9;
  adam_opts.beta2 = 0.999;
  nn::Adam<double> adam({&d}, adam_opts);

  for (int step = 0; step < o.steps; ++step) {
    const double s = o.strength_schedule[static_cast<std::size_t>(step) % o.strength_schedule.size()];
    d.zero_grad();
    for (std::size_t b0 = 0; b0 < items.size(); b0 += static_cast<std::size_t>(o.batch_size)) {
      const std::size_t b1 = std::min(items.size(), b0 + static_cast<std::size_t>(o.batch_size));
      auto [batch, w] = make_batch(b0, b1, d.value, s);
      const nn::Tensor<float> raw = generator.forward_style(batch, w);
      nn::Tensor<float> grad_raw(raw.n(), 3, raw.h(), raw.w());
      for (std::size_t i = b0; i < b1; ++i) {
        const Item& it = items[i];
        const int bi = static_cast<int>(i - b0);
        const ImageTensor edited = compose(it.sample.image, it.keep, to_image(raw, bi));
        const ImageTensor g = scorer.gradient(edited, prompt);
        if (!g.same_shape(edited)) throw ShapeError("scorer gradient has the wrong shape");
        // Drift is the mean squared change over all image values, the same
        // normalization as the pixel-mean scores.
        const double values = 3.0 * gc.height * gc.width;
        // Minimize -(score - identity_weight * drift) averaged over images.
        const double scale = 1.0 / static_cast<double>(items.size());
        for (int y = 0; y < gc.height; ++y)
          for (int x = 0; x < gc.width; ++x) {
            if (it.keep.at(y, x)) continue;
            for (int c = 0; c < 3; ++c) {
              const double drift = 2.0 * o.identity_weight * (edited.at(y, x, c) - it.base.at(y, x, c)) / values;
              grad_raw(bi, c, y, x) = static_cast<float>(-scale * (g.at(y, x, c) - drift));
            }
          }
      }
      const nn::Tensor<float> grad_w = generator.backward(grad_raw);
      for (int i = 0; i < grad_w.n(); ++i)
        for (int k = 0; k < wd; ++k) d.grad[k] += s * grad_w.plane(i, 0)[k];
    }
    adam.step();
  }
  generator.zero_grad();

  EditDirection out{prompt, d.value};
  const double n = out.norm();
  if (n > 0)
    for (double& v : out.direction) v /= n;
  return out;
}

}  // namespace realanon
