#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "realanon/image.hpp"
#include "realanon/rng.hpp"

namespace realanon {

/// Procedural stand-in for a person crop: capsule figure on a textured
/// background, its silhouette and a fake 16-channel surface embedding.
struct ToyFigure {
  ImageTensor image;
  BinaryMask region;       // 1 = figure
  EmbeddingMap embedding;  // zero outside the figure
  Box bbox;
};

/// Appearance that identifies a figure (used as identity for re-id).
struct FigureStyle {
  std::array<float, 3> shirt{}, stripe{}, pants{}, skin{}, hair{};
  float stripe_period = 0;  // pixels; 0 = plain shirt
  float stripe_angle = 0;   // radians
};

/// Geometry of one view of a figure, relative to the frame.
struct FigurePose {
  float center_x = 0.5f;  // fraction of width
  float top = 0.08f;      // fraction of height
  float scale = 0.84f;    // figure height as fraction of frame height
  float arm_left = 0.3f, arm_right = 0.3f;  // outward angle, radians
  float leg_left = 0.1f, leg_right = 0.1f;
};

FigureStyle random_style(Rng& rng);
FigurePose random_pose(Rng& rng);
/// Renders the figure over a background drawn from `background`.
ToyFigure render_figure(int height, int width, const FigureStyle& style, const FigurePose& pose, Rng& background);
ToyFigure make_toy_figure(int height, int width, std::uint64_t seed);

/// Deterministic indexable set of toy figures; samples are regenerated on
/// access, so any size is cheap.
class ToyFigureDataset {
 public:
  ToyFigureDataset(std::size_t size, int height, int width, std::uint64_t seed)
      : size_(size), height_(height), width_(width), seed_(seed) {}
  std::size_t size() const { return size_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::uint64_t seed() const { return seed_; }
  ToyFigure operator[](std::size_t i) const;

 private:
  std::size_t size_;
  int height_, width_;
  std::uint64_t seed_;
};

struct ToyReidImage {
  ToyFigure figure;
  int identity = 0;
  int view = 0;
};

/// `identities` x `views` images; appearance is shared within an identity,
/// pose and background vary per view.
std::vector<ToyReidImage> make_reid_set(int identities, int views, int height, int width, std::uint64_t seed);

}  // namespace realanon
