#pragma once

#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "realanon/image.hpp"

namespace realanon {

enum class DetectionSource { Face, InstanceSegmentation, DensePose };
enum class Category { PersonWithDense, PersonPlain, FaceOnly };

const char* to_string(DetectionSource s);
const char* to_string(Category c);
DetectionSource source_from_string(const std::string& s);
Category category_from_string(const std::string& s);

/// Dense surface embedding covering the integer rectangle `where` (frame
/// coordinates); `map` may have any resolution and is resampled on use.
struct DenseEmbeddingCrop {
  PixelRect where;
  EmbeddingMap map;
  bool operator==(const DenseEmbeddingCrop&) const = default;
};

/// Output of a single detector, in frame coordinates.
struct RawDetection {
  DetectionSource source = DetectionSource::Face;
  Box bbox;
  float confidence = 0.f;
  std::optional<BinaryMask> segmentation;  // full frame; absent for faces
  std::optional<DenseEmbeddingCrop> dense_embedding;  // dense-pose only

  /// Throws ConfigError when the source/payload invariants are violated.
  void validate() const;
};

/// A per-person (or per-face) record after ensemble fusion.
struct FusedDetection {
  Category category = Category::FaceOnly;
  Box bbox;
  BinaryMask region;  // 1 = pixels to anonymize
  std::optional<DenseEmbeddingCrop> dense_embedding;
  float confidence = 0.f;
  std::vector<int> contributors;  // indices into the raw list
  int track_id = -1;

  std::size_t coverage() const { return region.count(); }
};

/**
 * Fuses raw detections into categorized individuals.
 *
 * Dense-pose and instance-segmentation detections whose overlap exceeds
 * `iou_merge` are paired greedily (highest overlap first, one-to-one) and
 * anonymize the union of both masks. Overlap is mask IoU when both carry a
 * segmentation, box IoU otherwise. Unpaired instance segmentations become
 * PersonPlain, unpaired dense-pose detections stay PersonWithDense. A face
 * whose box center falls inside any person segmentation is dropped; the rest
 * become FaceOnly with their box as region.
 *
 * Output order: dense-pose individuals (input order), then plain persons,
 * then faces.
 */
std::vector<FusedDetection> fuse(const std::vector<RawDetection>& raw, int frame_height, int frame_width,
                                 double iou_merge = 0.4);

/// Re-expresses a fused detection as raw detections that fuse back to it.
std::vector<RawDetection> to_raw(const FusedDetection& fused);

/// Wraps one detector model. Implementations must be deterministic for a
/// fixed input.
class DetectorAdapter {
 public:
  explicit DetectorAdapter(std::string identity, float confidence_threshold = 0.f)
      : identity_(std::move(identity)), confidence_threshold_(confidence_threshold) {}
  virtual ~DetectorAdapter() = default;

  const std::string& identity() const { return identity_; }
  float confidence_threshold() const { return confidence_threshold_; }
  /// Adapters holding device state return false; calls are then serialized.
  virtual bool thread_safe() const { return false; }

  std::vector<RawDetection> invoke(const ImageTensor& image);

 protected:
  virtual std::vector<RawDetection> detect(const ImageTensor& image) = 0;

 private:
  std::string identity_;
  float confidence_threshold_;
  std::mutex mutex_;
};

/// Per-source minimum confidence. A detection is kept when its confidence
/// is >= the threshold of its source.
struct SourceThresholds {
  float face = 0.5f;
  float instance_segmentation = 0.5f;
  float dense_pose = 0.5f;

  float of(DetectionSource s) const;
  static SourceThresholds default_profile() { return {}; }
  static SourceThresholds market1501() { return {0.5f, 0.1f, 0.3f}; }
  static SourceThresholds profile(const std::string& name);
};

struct AdapterFailure {
  std::string adapter;
  std::string message;
};

struct EnsembleResult {
  std::vector<RawDetection> detections;
  std::vector<AdapterFailure> failures;
};

/// Runs every adapter; a throwing adapter is recorded and the rest still run.
EnsembleResult detect_all(const ImageTensor& image, std::span<DetectorAdapter* const> adapters,
                          const SourceThresholds& thresholds);

}  // namespace realanon
