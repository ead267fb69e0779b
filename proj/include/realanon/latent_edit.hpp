#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "realanon/generator.hpp"
#include "realanon/training.hpp"

namespace realanon {

/// Cluster centers in style space for multi-modal truncation.
struct TruncationCenters {
  std::vector<StyleVector> centers;
  int k() const { return static_cast<int>(centers.size()); }
  std::size_t nearest(const StyleVector& w) const;
};

/// k-means (k-means++ seeding, Lloyd iterations until the assignment stops
/// changing or `max_iters`). Throws ConfigError when samples < k.
TruncationCenters fit_centers(std::span<const StyleVector> samples, int k, std::uint64_t seed = 0,
                              int max_iters = 100);
/// Maps `n_samples` random latents and clusters them.
TruncationCenters fit_centers(Generator<float>& generator, int n_samples = 10000, int k = 64, std::uint64_t seed = 0);

/// c* + psi (w - c*), with c* the nearest center. psi in [0, 1].
StyleVector truncate(const StyleVector& w, const TruncationCenters& centers, double psi);

struct EditDirection {
  std::string name;
  std::vector<double> direction;
  double norm() const;
};

/// w + strength * d.
StyleVector apply_direction(const StyleVector& w, const EditDirection& d, double strength);

void save_directions(const std::string& path, const std::vector<EditDirection>& directions);
std::vector<EditDirection> load_directions(const std::string& path);
void save_centers(const std::string& path, const TruncationCenters& centers);
TruncationCenters load_centers(const std::string& path);

/**
 * Text-image similarity oracle. Differentiable scorers expose the pixel
 * gradient, which is back-propagated through the generator when searching
 * for a direction.
 */
class ImageScorer {
 public:
  virtual ~ImageScorer() = default;
  virtual double score(const ImageTensor& image, const std::string& prompt) const = 0;
  /// d score / d pixel, same shape as the image.
  virtual ImageTensor gradient(const ImageTensor& image, const std::string& prompt) const = 0;
};

/**
 * Hermetic stand-in for a vision-language model. Prompts: "bright"/"dark"
 * (mean intensity) and "red"/"green"/"blue" (channel mean minus the mean of
 * the other two).
 */
class SyntheticScorer : public ImageScorer {
 public:
  double score(const ImageTensor& image, const std::string& prompt) const override;
  ImageTensor gradient(const ImageTensor& image, const std::string& prompt) const override;
  static bool supports(const std::string& prompt);
};

struct DirectionSearchOptions {
  int n_images = 256;
  int steps = 100;
  double learning_rate = 0.05;
  double identity_weight = 1.0;  // penalty on the mean squared change over all image values
  std::vector<double> strength_schedule = {1.0};  // strength at step t: schedule[t % size]
  int batch_size = 8;
  std::uint64_t seed = 0;
};

/**
 * Optimizes one style-space direction d (starting at zero) with Adam to
 * raise the mean score of edited syntheses w_i + s_t d over `n_images`
 * conditions drawn from `conditions`, minus an identity-drift penalty.
 * The result is unit-normalized unless it is exactly zero (e.g. zero steps).
 */
EditDirection find_global_direction(Generator<float>& generator, const ImageScorer& scorer, const std::string& prompt,
                                    const DataSource& conditions, const DirectionSearchOptions& options);

}  // namespace realanon
