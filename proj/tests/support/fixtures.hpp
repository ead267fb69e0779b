#pragma once

#include <array>
#include <string>
#include <vector>

#include "realanon/anonymizer.hpp"
#include "realanon/dataset_forge.hpp"
#include "realanon/detection.hpp"
#include "realanon/rng.hpp"

namespace realanon::testing {

BinaryMask ellipse_mask(int height, int width, double cx, double cy, double rx, double ry);
ImageTensor random_image(int height, int width, Rng& rng);
BinaryMask random_mask(int height, int width, Rng& rng, double p_keep = 0.5);

/// Reference fusion result, compared against fuse() as an unordered set.
struct OracleDetection {
  Category category;
  BinaryMask region;
  std::vector<int> contributors;  // sorted
};

/**
 * Brute-force reimplementation of the fusion rules: pixel-counted overlaps
 * for every dense/segmentation pair, repeated extraction of the best
 * remaining pair above the threshold, then face containment by direct
 * lookup of the center pixel in every person region.
 */
std::vector<OracleDetection> oracle_fuse(const std::vector<RawDetection>& raw, int height, int width, double threshold);

/// Random scene with at most `max_detections` raw detections: persons seen
/// by one or both body detectors, faces on heads and in the background.
std::vector<RawDetection> random_scene(Rng& rng, int height, int width, int max_detections);

/// True when fuse() and the oracle agree on categories, regions and contributors.
bool fusion_matches_oracle(const std::vector<FusedDetection>& fused, const std::vector<OracleDetection>& oracle,
                           std::string* why = nullptr);

/// Partition with the 26 default part names; part p owns ids [1000p, 1000p + 400).
VertexPartition fixture_partition();

struct FilterFixture {
  std::string name;
  CandidateRecord record;
  std::vector<std::string> expected_failures;  // in criterion order
};

/// Twenty records around every filter boundary with their expected verdicts.
std::vector<FilterFixture> filter_fixtures();

/// Options for building one filter record.
struct RecordSpec {
  int height = 160, width = 96;
  float confidence = 0.99f;
  float quality = 4.5f;
  bool grayscale = false;
  bool derive_grayscale = false;  // give an image instead of the flag
  std::vector<int> vertices_per_part = std::vector<int>(26, 150);
  int keypoint_matches = 17;
  int cse_pixels = 400;  // instance mask has 400 pixels; the cse mask is a prefix
};
CandidateRecord build_record(const std::string& id, const RecordSpec& spec);

/**
 * Stub synthesizer that paints the whole crop in a color derived from the
 * latent. Stitching must confine the paste to the detection region, so
 * the color of a stitched pixel identifies the detection that wrote it.
 */
class ColorSynthesizer : public Synthesizer {
 public:
  ColorSynthesizer(int body_height = 48, int body_width = 32, int face_size = 32, int z_dim = 8)
      : body_h_(body_height), body_w_(body_width), face_(face_size), z_dim_(z_dim) {}
  bool available(GeneratorId) const override { return true; }
  int height(GeneratorId id) const override { return id == GeneratorId::Face ? face_ : body_h_; }
  int width(GeneratorId id) const override { return id == GeneratorId::Face ? face_ : body_w_; }
  int z_dim(GeneratorId) const override { return z_dim_; }
  ImageTensor generate(GeneratorId id, const ImageTensor& crop, const BinaryMask& keep, const EmbeddingMap* condition,
                       const LatentCode& z, const StyleEdit& edit) override;
  static std::array<float, 3> color_of(const LatentCode& z);

  std::vector<GeneratorId> calls;

 private:
  int body_h_, body_w_, face_, z_dim_;
};

/// Person detection with the given region; dense category gets a zero embedding.
FusedDetection make_detection(const BinaryMask& region, Category category);

}  // namespace realanon::testing
