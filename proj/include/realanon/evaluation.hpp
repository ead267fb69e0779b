#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "realanon/image.hpp"

namespace realanon {

/// Gaussian fit of a feature distribution: mean, unbiased covariance
/// (row-major dim x dim) and sample count.
struct FeatureStatistics {
  int dim = 0;
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<double> covariance;
  double cov(int i, int j) const { return covariance[static_cast<std::size_t>(i) * dim + j]; }
};

/// Streaming mean/co-moment accumulator; partial accumulators merge
/// associatively, so shards can be processed independently.
class StatisticsAccumulator {
 public:
  explicit StatisticsAccumulator(int dim);
  void add(std::span<const double> feature);
  void merge(const StatisticsAccumulator& other);
  std::size_t count() const { return n_; }
  /// Throws ConfigError with fewer than two samples.
  FeatureStatistics finalize() const;

 private:
  int dim_;
  std::size_t n_ = 0;
  std::vector<double> mean_, comoment_;
};

/**
 * Frechet distance between two Gaussians,
 * |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
 * The trace of the square root is taken from the eigenvalues of the
 * symmetric matrix S_a^(1/2) S_b S_a^(1/2). Eigenvalues below -1e-6
 * (relative to the spectrum scale) raise NumericalError.
 */
double frechet_distance(const FeatureStatistics& a, const FeatureStatistics& b);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<double> extract(const ImageTensor& image) const = 0;
};

/// Raw pixels, resampled to height x width.
class PixelExtractor : public FeatureExtractor {
 public:
  PixelExtractor(int height, int width) : height_(height), width_(width) {}
  std::string name() const override { return "pixels"; }
  int dim() const override { return height_ * width_ * 3; }
  std::vector<double> extract(const ImageTensor& image) const override;

 private:
  int height_, width_;
};

/// Fixed Gaussian random projection of resampled pixels.
class RandomProjectionExtractor : public FeatureExtractor {
 public:
  RandomProjectionExtractor(int height, int width, int dim, std::uint64_t seed);
  std::string name() const override { return "random_projection"; }
  int dim() const override { return dim_; }
  std::vector<double> extract(const ImageTensor& image) const override;

 private:
  PixelExtractor pixels_;
  int dim_;
  std::vector<double> matrix_;  // dim x input
};

/// "pixels" or "random_projection"; inputs resampled to height x width.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, int height, int width,
                                                 std::uint64_t seed = 0);

FeatureStatistics compute_statistics(std::span<const ImageTensor> images, const FeatureExtractor& extractor);
FeatureStatistics compute_statistics(std::span<const std::vector<double>> features);

struct ReidItem {
  std::vector<double> feature;
  int identity = -1;
  int source_id = -1;  // gallery items from the query's own source image are ignored
};

struct ReidResult {
  double mean_ap = 0;
  double rank1 = 0;
  std::size_t queries = 0;
};

/**
 * Ranks the gallery by cosine similarity for every query. Ties are broken
 * pessimistically (non-matches first). AP is the mean of precision at each
 * positive's rank, over all same-identity gallery items.
 */
ReidResult evaluate_reid(std::span<const ReidItem> queries, std::span<const ReidItem> gallery);

/// Feature used by the re-id harness: zero-mean, unit-norm pixels.
std::vector<double> reid_pixel_feature(const ImageTensor& image, int height, int width);

struct ToyReidOptions {
  int identities = 20;
  int views = 5;
  int height = 96;
  int width = 64;
  int feature_height = 48;
  int feature_width = 32;
};

/// Transform applied to gallery images only; receives the image and the
/// ground-truth person region.
using GalleryAnonymizer = std::function<ImageTensor(const ImageTensor& image, const BinaryMask& region, int index)>;

/**
 * Procedural re-id protocol: every original image is a query against the
 * anonymized versions of all other images (leave-one-out).
 */
ReidResult run_toy_reid(const ToyReidOptions& options, std::uint64_t seed, const GalleryAnonymizer& anonymize);

/// One-sided exact sign test: P(X >= positives) for X ~ Binomial(n, 1/2).
double sign_test_p_value(int positives, int n);

}  // namespace realanon
