#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace realanon {

/**
 * Axis-aligned box in pixel coordinates, (x0, y0) inclusive corner and
 * (x1, y1) exclusive corner.
 */
struct Box {
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  float width() const { return x1 - x0; }
  float height() const { return y1 - y0; }
  float area() const { return width() > 0 && height() > 0 ? width() * height() : 0.f; }
  float center_x() const { return 0.5f * (x0 + x1); }
  float center_y() const { return 0.5f * (y0 + y1); }
  bool valid() const { return x1 > x0 && y1 > y0; }
  Box clamped(int frame_width, int frame_height) const;
  Box united(const Box& other) const;

  bool operator==(const Box&) const = default;
};

/// Integer rectangle; may extend past the frame (used for crops with padding).
struct PixelRect {
  int x = 0, y = 0, width = 0, height = 0;
  bool empty() const { return width <= 0 || height <= 0; }
  bool operator==(const PixelRect&) const = default;
};

/// H x W x 3 interleaved RGB image with values in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, float fill = 0.f);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  float* pixel(int y, int x) { return &pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3]; }
  const float* pixel(int y, int x) const { return &pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3]; }

  std::span<float> values() { return pixels_; }
  std::span<const float> values() const { return pixels_; }

  bool same_shape(const ImageTensor& o) const { return height_ == o.height_ && width_ == o.width_; }
  bool all_finite() const;
  bool operator==(const ImageTensor&) const = default;

 private:
  int height_ = 0, width_ = 0;
  std::vector<float> pixels_;
};

/// H x W binary map. Used both as an anonymization region (1 = person) and
/// as the generator keep-mask (1 = known pixel, 0 = synthesize).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0);

  static BinaryMask from_box(int height, int width, const Box& box);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty_shape() const { return values_.empty(); }

  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool v) { values_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  std::span<const std::uint8_t> values() const { return values_; }

  std::size_t count() const;
  bool any() const { return count() > 0; }
  /// Tight bounding box of set pixels; invalid Box when empty.
  Box bounds() const;
  BinaryMask inverted() const;
  BinaryMask& operator|=(const BinaryMask& other);
  bool contains(const BinaryMask& other) const;
  bool same_shape(const BinaryMask& o) const { return height_ == o.height_ && width_ == o.width_; }
  BinaryMask dilated(int radius) const;
  bool operator==(const BinaryMask&) const = default;

 private:
  int height_ = 0, width_ = 0;
  std::vector<std::uint8_t> values_;
};

/// Per-pixel dense surface embedding, stored channel-major (C x H x W).
class EmbeddingMap {
 public:
  static constexpr int kDenseChannels = 16;

  EmbeddingMap() = default;
  EmbeddingMap(int channels, int height, int width, float fill = 0.f);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return values_.empty(); }

  float& at(int c, int y, int x) { return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const { return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  bool operator==(const EmbeddingMap&) const = default;

 private:
  int channels_ = 0, height_ = 0, width_ = 0;
  std::vector<float> values_;
};

/// Region of an image copied out; pixels outside the frame are reflected.
ImageTensor crop_reflect(const ImageTensor& image, const PixelRect& rect);
BinaryMask crop_zero(const BinaryMask& mask, const PixelRect& rect);

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);
EmbeddingMap resize_bilinear(const EmbeddingMap& map, int height, int width);

/// Places `map` (aligned to `where`, in frame coordinates) into a canvas of
/// the crop `rect`, resampled to height x width. Uncovered pixels are zero.
EmbeddingMap project_embedding(const EmbeddingMap& map, const PixelRect& where, const PixelRect& rect,
                               int height, int width);

ImageTensor flip_horizontal(const ImageTensor& image);
BinaryMask flip_horizontal(const BinaryMask& mask);
EmbeddingMap flip_horizontal(const EmbeddingMap& map);

/// True when every pixel's channels differ pairwise by less than 1/255.
bool is_grayscale(const ImageTensor& image);

}  // namespace realanon
