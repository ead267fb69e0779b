#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "realanon/discriminator.hpp"
#include "realanon/generator.hpp"
#include "realanon/nn/optim.hpp"
#include "realanon/rng.hpp"
#include "realanon/toy_data.hpp"

namespace realanon {

using Json = nlohmann::json;

enum class GanLoss { NonSaturating, Hinge };

struct TrainConfig {
  GeneratorConfig generator = GeneratorConfig::full_body_cse();
  int batch_size = 32;
  double lr = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  GanLoss loss = GanLoss::NonSaturating;
  double r1_gamma = 1.0;
  int r1_interval = 16;  // lazy regularization period; 0 disables R1
  double ema_decay = 0.999;
  bool horizontal_flip = true;
  int steps = 1000;
  std::uint64_t seed = 0;
  int log_every = 1;

  /// Full-body CSE generator at 288x160 with batch 32 and lr 0.002.
  static TrainConfig full();
  /// 96x64 toy setup used by the smoke runs.
  static TrainConfig toy();
  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);
/// Reads "key: value" lines ('#' comments); keys as in to_json, with
/// generator fields prefixed "generator.".
TrainConfig parse_train_config(const std::string& text);

/// One training example: an image, the region to synthesize and its
/// surface embedding (empty for unconditional setups).
struct TrainingSample {
  ImageTensor image;
  BinaryMask region;
  EmbeddingMap embedding;
};

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingSample sample(std::size_t index) const = 0;
};

class ToyDataSource : public DataSource {
 public:
  explicit ToyDataSource(ToyFigureDataset data) : data_(data) {}
  std::size_t size() const override { return data_.size(); }
  TrainingSample sample(std::size_t index) const override;

 private:
  ToyFigureDataset data_;
};

/**
 * Directory of samples listed in manifest.jsonl, one object per line:
 * {"image": "a.png", "mask": "a_mask.png", "embedding": "a.npy"?}.
 * Mask pixels > 0 mark the region to synthesize.
 */
class DirectoryDataSource : public DataSource {
 public:
  explicit DirectoryDataSource(const std::string& dir);
  std::size_t size() const override { return entries_.size(); }
  TrainingSample sample(std::size_t index) const override;

 private:
  struct Entry {
    std::string image, mask, embedding;
  };
  std::string dir_;
  std::vector<Entry> entries_;
};

/// A named, inspectable data transform.
class Augmentation {
 public:
  virtual ~Augmentation() = default;
  virtual std::string name() const = 0;
  virtual void apply(TrainingSample& sample, Rng& rng) const = 0;
};

/// Flips image, region and embedding together with probability 1/2; the
/// embedding is mirrored spatially without permuting channels.
class HorizontalFlip : public Augmentation {
 public:
  std::string name() const override { return "horizontal_flip"; }
  void apply(TrainingSample& sample, Rng& rng) const override;
};

class AugmentationPipeline {
 public:
  static AugmentationPipeline from_config(const TrainConfig& config);
  void add(std::unique_ptr<Augmentation> a) { stages_.push_back(std::move(a)); }
  std::vector<std::string> names() const;
  void apply(TrainingSample& sample, Rng& rng) const;

 private:
  std::vector<std::shared_ptr<const Augmentation>> stages_;
};

struct StepResult {
  std::int64_t step = 0;
  double d_loss = 0;
  double g_loss = 0;
  double logit_real = 0;  // batch means
  double logit_fake = 0;
  std::optional<double> r1;
  std::optional<double> eval_metric;
};

Json to_json(const StepResult& r);

/// ema <- decay * ema + (1 - decay) * current, parameter by parameter.
template <typename T>
void ema_update(const nn::ParameterRefs<T>& current, const nn::ParameterRefs<T>& ema, double decay);
void ema_update(Generator<float>& current, Generator<float>& ema, double decay);

/**
 * R1 penalty gradient for the discriminator on `real`: accumulates
 * weight * d/dtheta [ 1/2 * sum_i |grad_x D(x_i)|^2 ] into the parameter
 * gradients. The Hessian-vector product is taken by central differences of
 * parameter gradients along the input gradient. Returns mean |grad_x D|^2.
 */
template <typename T>
double r1_penalty_backward(Discriminator<T>& d, const nn::Tensor<T>& real, const nn::Tensor<T>& mask,
                           const nn::Tensor<T>& condition, double weight);

/// Batch assembled from a data source; mask is the keep mask.
struct TrainingBatch {
  GeneratorBatch<float> data;
  nn::Tensor<float> z;
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const DataSource> data);

  /// One discriminator update followed by one generator update, sharing a
  /// single generator forward pass. Throws NumericalError (with a snapshot
  /// of the step's statistics) on non-finite losses.
  StepResult step();

  /// Samples the next batch, advancing the RNG.
  TrainingBatch next_batch();

  std::int64_t current_step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  Generator<float>& generator() { return g_; }
  Generator<float>& generator_ema() { return g_ema_; }
  Discriminator<float>& discriminator() { return d_; }
  const AugmentationPipeline& augmentations() const { return augment_; }

  /// Writes weights, EMA weights, optimizer moments, RNG state and step.
  void save(const std::string& path);
  static std::unique_ptr<Trainer> resume(const std::string& path, std::shared_ptr<const DataSource> data);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

 private:
  TrainConfig config_;
  std::shared_ptr<const DataSource> data_;
  AugmentationPipeline augment_;
  Generator<float> g_, g_ema_;
  Discriminator<float> d_;
  nn::Adam<float> g_opt_, d_opt_;
  Rng rng_;
  std::int64_t step_ = 0;
};

/// Appends one JSON object per line.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path);
  void append(const Json& record);

 private:
  std::string path_;
};

struct EvalPoint {
  std::int64_t step = 0;
  double logit_gap = 0;  // mean real logit minus mean fake logit
  double metric = 0;     // lower is better (e.g. Frechet distance)
};

struct OverfittingReport {
  bool diverging = false;
  double gap_change = 0;
  double metric_change = 0;
  std::string reason;
};

/// Flags discriminator overfitting when, over the last `window` points, the
/// logit gap never shrinks and grows overall while the metric worsens.
OverfittingReport monitor_overfitting(const std::vector<EvalPoint>& history, std::size_t window = 4);

}  // namespace realanon
