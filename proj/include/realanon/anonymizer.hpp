#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "realanon/detection.hpp"
#include "realanon/errors.hpp"
#include "realanon/generator.hpp"
#include "realanon/latent_edit.hpp"

namespace realanon {

using Json = nlohmann::json;

enum class GeneratorId { BodyDense, BodyPlain, Face };
const char* to_string(GeneratorId id);
GeneratorId generator_for(Category c);

/// Frame rectangle mapped onto a generator's input resolution.
struct CropTransform {
  PixelRect source;
  int target_height = 0;
  int target_width = 0;
};

/// Expands a body box by `margin` and then to the target aspect ratio,
/// keeping its center; never scales non-uniformly.
CropTransform body_crop(const Box& bbox, int target_height, int target_width, double margin = 0.15);
/// Square crop around a face box, side = expansion * max(w, h).
CropTransform face_crop(const Box& bbox, int target_size, double expansion = 1.5);

struct PlanEntry {
  int detection = -1;  // index into the detection list
  GeneratorId generator = GeneratorId::Face;
  std::size_t coverage = 0;
  LatentCode latent;
};

struct AnonymizationPlan {
  std::vector<PlanEntry> entries;  // stitch order
};

/// Routes detections to generators and orders them by coverage, ascending
/// (default) with ties kept in input order. `latents` holds one code per detection.
AnonymizationPlan plan(const std::vector<FusedDetection>& detections, const std::vector<LatentCode>& latents,
                       bool ascending = true);

/// Style-space edits applied before synthesis.
struct StyleEdit {
  double psi = 1.0;
  std::vector<std::pair<std::string, double>> directions;  // name, strength
};

/**
 * Produces the composed crop for one plan entry: generated content where
 * `keep` is 0, the crop itself where it is 1.
 */
class Synthesizer {
 public:
  virtual ~Synthesizer() = default;
  virtual bool available(GeneratorId id) const = 0;
  virtual int height(GeneratorId id) const = 0;
  virtual int width(GeneratorId id) const = 0;
  virtual int z_dim(GeneratorId id) const = 0;
  virtual ImageTensor generate(GeneratorId id, const ImageTensor& crop, const BinaryMask& keep,
                               const EmbeddingMap* condition, const LatentCode& z, const StyleEdit& edit) = 0;
};

/// Synthesizer backed by inpainting generators, with optional truncation
/// centers and named edit directions per generator.
class GanSynthesizer : public Synthesizer {
 public:
  /// Loads "<slot>.ckpt" (slots body_cse, body_plain, face) plus optional
  /// "<slot>.centers.json" and "<slot>.directions.json" from `dir`. Missing
  /// checkpoints leave the slot empty.
  static std::shared_ptr<GanSynthesizer> load_directory(const std::string& dir);

  void set_generator(GeneratorId id, std::shared_ptr<Generator<float>> g);
  void set_centers(GeneratorId id, TruncationCenters centers);
  void add_direction(GeneratorId id, EditDirection d);
  std::vector<std::string> directions(GeneratorId id) const;

  bool available(GeneratorId id) const override;
  int height(GeneratorId id) const override;
  int width(GeneratorId id) const override;
  int z_dim(GeneratorId id) const override;
  ImageTensor generate(GeneratorId id, const ImageTensor& crop, const BinaryMask& keep, const EmbeddingMap* condition,
                       const LatentCode& z, const StyleEdit& edit) override;

 private:
  struct Slot {
    std::shared_ptr<Generator<float>> generator;
    std::optional<TruncationCenters> centers;
    std::map<std::string, EditDirection> directions;
  };
  const Slot& slot(GeneratorId id) const;
  std::map<GeneratorId, Slot> slots_;
};

/// Thrown when a stitch step fails; carries how many steps had completed.
class StitchError : public Error {
 public:
  StitchError(int completed_steps, int detection, const std::string& what)
      : Error("stitch step " + std::to_string(completed_steps) + " (detection " + std::to_string(detection) +
              ") failed: " + what),
        completed_steps_(completed_steps) {}
  int completed_steps() const { return completed_steps_; }

 private:
  int completed_steps_;
};

struct StitchOptions {
  double body_margin = 0.15;
  double face_expansion = 1.5;
  int mask_dilation = 0;
  StyleEdit edit;
};

struct StitchResult {
  ImageTensor image;
  /// Per pixel, the detection index whose synthesis wrote it last (-1 = input).
  std::vector<int> owner;
};

/**
 * Recursive stitching: every entry is cropped from the current canvas, so
 * later syntheses see earlier ones as context; only pixels of the entry's
 * region are pasted back.
 */
StitchResult anonymize_image(const ImageTensor& image, const std::vector<FusedDetection>& detections,
                             const AnonymizationPlan& plan, Synthesizer& synthesizer, const StitchOptions& options = {});

/// Fills each of the grid x grid cells of the region's bounding box with the
/// mean color of the region pixels inside it; other pixels are untouched.
ImageTensor pixelate(const ImageTensor& image, const BinaryMask& region, int grid);
ImageTensor mask_out(const ImageTensor& image, const BinaryMask& region, float fill = 0.f);

enum class Mode { Gan, Pixelate8, Pixelate16, MaskOut };
Mode mode_from_string(const std::string& s);
const char* to_string(Mode m);

/// Audit record: stitch order, generator, coverage and box per detection.
Json plan_audit(const AnonymizationPlan& plan, const std::vector<FusedDetection>& detections);

struct AnonymizeOutput {
  ImageTensor image;
  std::vector<FusedDetection> detections;
  AnonymizationPlan plan;
  std::vector<AdapterFailure> failures;
  std::vector<int> owner;
};

/// Latent of detection `index` (or of its track when tracked) for a render seed.
LatentCode detection_latent(std::uint64_t seed, const FusedDetection& detection, int index, int z_dim);

/// Applies `mode` to already-fused detections. For Gan mode, latents come
/// from detection_latent unless `latents` overrides them.
AnonymizeOutput anonymize_detections(const ImageTensor& image, std::vector<FusedDetection> detections, Mode mode,
                                     std::uint64_t seed, Synthesizer* synthesizer, const StitchOptions& options = {},
                                     const std::vector<LatentCode>* latents = nullptr);

/// Detect, fuse, plan and render in one call.
AnonymizeOutput anonymize(const ImageTensor& image, std::span<DetectorAdapter* const> adapters,
                          const SourceThresholds& thresholds, Mode mode, std::uint64_t seed, Synthesizer* synthesizer,
                          const StitchOptions& options = {});

}  // namespace realanon
