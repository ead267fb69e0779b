#include "realanon/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "realanon/errors.hpp"
#include "realanon/rng.hpp"
#include "realanon/toy_data.hpp"

namespace realanon {

StatisticsAccumulator::StatisticsAccumulator(int dim)
    : dim_(dim), mean_(static_cast<std::size_t>(dim), 0.0), comoment_(static_cast<std::size_t>(dim) * dim, 0.0) {
  if (dim <= 0) throw ConfigError("statistics dimension must be positive");
}

void StatisticsAccumulator::add(std::span<const double> f) {
  if (static_cast<int>(f.size()) != dim_) throw ShapeError("feature dimension mismatch");
  ++n_;
  std::vector<double> delta(f.size());
  for (int i = 0; i < dim_; ++i) {
    delta[i] = f[i] - mean_[i];
    mean_[i] += delta[i] / static_cast<double>(n_);
  }
  // Welford: C += (x - mean_old)(x - mean_new)^T
  for (int i = 0; i < dim_; ++i) {
    const double di = delta[i];
    double* row = &comoment_[static_cast<std::size_t>(i) * dim_];
    for (int j = 0; j < dim_; ++j) row[j] += di * (f[j] - mean_[j]);
  }
}

void StatisticsAccumulator::merge(const StatisticsAccumulator& o) {
  if (o.dim_ != dim_) throw ShapeError("cannot merge statistics of different dimension");
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_), n = na + nb;
  std::vector<double> delta(dim_);
  for (int i = 0; i < dim_; ++i) delta[i] = o.mean_[i] - mean_[i];
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * dim_ + j;
      comoment_[k] += o.comoment_[k] + delta[i] * delta[j] * na * nb / n;
    }
  for (int i = 0; i < dim_; ++i) mean_[i] += delta[i] * nb / n;
  n_ += o.n_;
}

FeatureStatistics StatisticsAccumulator::finalize() const {
  if (n_ < 2) throw ConfigError("statistics need at least two samples");
  FeatureStatistics s;
  s.dim = dim_;
  s.n = n_;
  s.mean = mean_;
  s.covariance.resize(comoment_.size());
  const double inv = 1.0 / static_cast<double>(n_ - 1);
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) {
      // Symmetrize to remove accumulation-order asymmetry.
      const double c = 0.5 * (comoment_[static_cast<std::size_t>(i) * dim_ + j] +
                              comoment_[static_cast<std::size_t>(j) * dim_ + i]);
      s.covariance[static_cast<std::size_t>(i) * dim_ + j] = c * inv;
    }
  return s;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_matrix(const FeatureStatistics& s) {
  if (static_cast<int>(s.covariance.size()) != s.dim * s.dim || static_cast<int>(s.mean.size()) != s.dim)
    throw ShapeError("malformed feature statistics");
  Mat m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      s.covariance.data(), s.dim, s.dim);
  return 0.5 * (m + m.transpose());
}

/// Eigenvalues of a symmetric matrix, negatives within tolerance clipped to 0.
Vec clipped_eigenvalues(const Mat& m, const char* what, Eigen::MatrixXd* vectors = nullptr) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError(std::string("eigendecomposition failed for ") + what);
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double lo = ev.minCoeff();
  if (lo < -1e-6 * scale) {
    std::ostringstream os;
    os << what << " is not positive semidefinite: min eigenvalue " << lo << ", max " << ev.maxCoeff()
       << ", condition estimate " << (ev.maxCoeff() / std::max(std::abs(lo), 1e-300));
    throw NumericalError(os.str());
  }
  ev = ev.cwiseMax(0.0);
  if (vectors) *vectors = es.eigenvectors();
  return ev;
}

}  // namespace

double frechet_distance(const FeatureStatistics& a, const FeatureStatistics& b) {
  if (a.dim != b.dim) throw ShapeError("frechet_distance: dimension mismatch");
  const Mat sa = to_matrix(a), sb = to_matrix(b);
  const Vec mu_a = Eigen::Map<const Vec>(a.mean.data(), a.dim);
  const Vec mu_b = Eigen::Map<const Vec>(b.mean.data(), b.dim);

  Mat va;
  const Vec ea = clipped_eigenvalues(sa, "covariance a", &va);
  const Mat sqrt_a = va * ea.cwiseSqrt().asDiagonal() * va.transpose();
  Mat inner = sqrt_a * sb * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  const Vec ei = clipped_eigenvalues(inner, "covariance product");
  const double tr_sqrt = ei.cwiseSqrt().sum();
  const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

std::vector<double> PixelExtractor::extract(const ImageTensor& image) const {
  const ImageTensor r =
      image.height() == height_ && image.width() == width_ ? image : resize_bilinear(image, height_, width_);
  return {r.values().begin(), r.values().end()};
}

RandomProjectionExtractor::RandomProjectionExtractor(int height, int width, int dim, std::uint64_t seed)
    : pixels_(height, width), dim_(dim) {
  if (dim <= 0) throw ConfigError("projection dimension must be positive");
  const int in = pixels_.dim();
  matrix_.resize(static_cast<std::size_t>(dim) * in);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : matrix_) v = rng.normal() * scale;
}

std::vector<double> RandomProjectionExtractor::extract(const ImageTensor& image) const {
  const std::vector<double> x = pixels_.extract(image);
  std::vector<double> out(dim_);
  for (int k = 0; k < dim_; ++k) {
    const double* row = &matrix_[static_cast<std::size_t>(k) * x.size()];
    out[k] = std::inner_product(x.begin(), x.end(), row, 0.0);
  }
  return out;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, int height, int width, std::uint64_t seed) {
  if (name == "pixels") return std::make_unique<PixelExtractor>(height, width);
  if (name == "random_projection") return std::make_unique<RandomProjectionExtractor>(height, width, 64, seed);
  throw ConfigError("unknown feature extractor: " + name);
}

FeatureStatistics compute_statistics(std::span<const ImageTensor> images, const FeatureExtractor& extractor) {
  StatisticsAccumulator acc(extractor.dim());
  for (const auto& img : images) acc.add(extractor.extract(img));
  return acc.finalize();
}

FeatureStatistics compute_statistics(std::span<const std::vector<double>> features) {
  if (features.empty()) throw ConfigError("statistics need at least two samples");
  StatisticsAccumulator acc(static_cast<int>(features.front().size()));
  for (const auto& f : features) acc.add(f);
  return acc.finalize();
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
  const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  return na > 0 && nb > 0 ? dot / (na * nb) : 0.0;
}

}  // namespace

ReidResult evaluate_reid(std::span<const ReidItem> queries, std::span<const ReidItem> gallery) {
  for (const auto& g : gallery)
    if (g.identity < 0) throw ConfigError("gallery item without identity");
  ReidResult res;
  double ap_sum = 0, r1_sum = 0;
  for (const auto& q : queries) {
    struct Scored {
      double score;
      bool match;
    };
    std::vector<Scored> ranked;
    for (const auto& g : gallery) {
      if (q.source_id >= 0 && g.source_id == q.source_id) continue;
      if (g.feature.size() != q.feature.size()) throw ShapeError("re-id feature dimension mismatch");
      ranked.push_back({cosine(q.feature, g.feature), g.identity == q.identity});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score > b.score;
      return !a.match && b.match;  // pessimistic ties
    });
    const auto positives = std::count_if(ranked.begin(), ranked.end(), [](const Scored& s) { return s.match; });
    if (positives == 0) throw ConfigError("query identity " + std::to_string(q.identity) + " has no gallery match");
    double ap = 0;
    long hits = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k)
      if (ranked[k].match) ap += static_cast<double>(++hits) / static_cast<double>(k + 1);
    ap_sum += ap / static_cast<double>(positives);
    r1_sum += ranked.front().match ? 1.0 : 0.0;
    ++res.queries;
  }
  if (res.queries) {
    res.mean_ap = ap_sum / static_cast<double>(res.queries);
    res.rank1 = r1_sum / static_cast<double>(res.queries);
  }
  return res;
}

std::vector<double> reid_pixel_feature(const ImageTensor& image, int height, int width) {
  std::vector<double> f = PixelExtractor(height, width).extract(image);
  const double m = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  for (double& v : f) v -= m;
  const double norm = std::sqrt(std::inner_product(f.begin(), f.end(), f.begin(), 0.0));
  if (norm > 0)
    for (double& v : f) v /= norm;
  return f;
}

ReidResult run_toy_reid(const ToyReidOptions& o, std::uint64_t seed, const GalleryAnonymizer& anonymize) {
  const auto set = make_reid_set(o.identities, o.views, o.height, o.width, seed);
  std::vector<ReidItem> queries, gallery;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& item = set[i];
    const int src = static_cast<int>(i);
    queries.push_back({reid_pixel_feature(item.figure.image, o.feature_height, o.feature_width), item.identity, src});
    const ImageTensor anon = anonymize(item.figure.image, item.figure.region, src);
    gallery.push_back({reid_pixel_feature(anon, o.feature_height, o.feature_width), item.identity, src});
  }
  return evaluate_reid(queries, gallery);
}

double sign_test_p_value(int positives, int n) {
  if (n <= 0 || positives < 0 || positives > n) throw ConfigError("sign test: invalid counts");
  double p = 0;
  for (int k = positives; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(p, 1.0);
}

}  // namespace realanon
