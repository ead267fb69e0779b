#include "realanon/image.hpp"

#include <algorithm>
#include <cmath>

#include "realanon/errors.hpp"

namespace realanon {

Box Box::clamped(int frame_width, int frame_height) const {
  Box b;
  b.x0 = std::clamp(x0, 0.f, static_cast<float>(frame_width));
  b.x1 = std::clamp(x1, 0.f, static_cast<float>(frame_width));
  b.y0 = std::clamp(y0, 0.f, static_cast<float>(frame_height));
  b.y1 = std::clamp(y1, 0.f, static_cast<float>(frame_height));
  return b;
}

Box Box::united(const Box& o) const {
  return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
}

ImageTensor::ImageTensor(int height, int width, float fill)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width * 3, fill) {
  if (height <= 0 || width <= 0) throw ShapeError("image dimensions must be positive");
}

bool ImageTensor::all_finite() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return std::isfinite(v); });
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width), values_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
  if (height <= 0 || width <= 0) throw ShapeError("mask dimensions must be positive");
}

BinaryMask BinaryMask::from_box(int height, int width, const Box& box) {
  BinaryMask m(height, width);
  const Box b = box.clamped(width, height);
  const int x0 = static_cast<int>(std::floor(b.x0)), x1 = static_cast<int>(std::ceil(b.x1));
  const int y0 = static_cast<int>(std::floor(b.y0)), y1 = static_cast<int>(std::ceil(b.y1));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

Box BinaryMask::bounds() const {
  int x0 = width_, y0 = height_, x1 = -1, y1 = -1;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (at(y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {};
  return {static_cast<float>(x0), static_cast<float>(y0), static_cast<float>(x1 + 1), static_cast<float>(y1 + 1)};
}

BinaryMask BinaryMask::inverted() const {
  BinaryMask m = *this;
  for (auto& v : m.values_) v = v ? 0 : 1;
  return m;
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
  if (!same_shape(other)) throw ShapeError("mask union: shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = values_[i] | other.values_[i];
  return *this;
}

bool BinaryMask::contains(const BinaryMask& other) const {
  if (!same_shape(other)) throw ShapeError("mask containment: shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (other.values_[i] && !values_[i]) return false;
  return true;
}

BinaryMask BinaryMask::dilated(int radius) const {
  if (radius <= 0) return *this;
  BinaryMask out(height_, width_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      if (!at(y, x)) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < height_ && xx >= 0 && xx < width_ && dx * dx + dy * dy <= radius * radius)
            out.set(yy, xx, true);
        }
    }
  return out;
}

EmbeddingMap::EmbeddingMap(int channels, int height, int width, float fill)
    : channels_(channels),
      height_(height),
      width_(width),
      values_(static_cast<std::size_t>(channels) * height * width, fill) {
  if (channels <= 0 || height <= 0 || width <= 0) throw ShapeError("embedding dimensions must be positive");
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

struct LinearTap {
  int i0, i1;
  float w1;
};

LinearTap linear_tap(int dst, int src_size, int dst_size) {
  const float scale = static_cast<float>(src_size) / static_cast<float>(dst_size);
  float s = (static_cast<float>(dst) + 0.5f) * scale - 0.5f;
  s = std::clamp(s, 0.f, static_cast<float>(src_size - 1));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, src_size - 1);
  return {i0, i1, s - static_cast<float>(i0)};
}

int nearest_tap(int dst, int src_size, int dst_size) {
  const double s = (static_cast<double>(dst) + 0.5) * src_size / dst_size;
  return std::clamp(static_cast<int>(std::floor(s)), 0, src_size - 1);
}

}  // namespace

ImageTensor crop_reflect(const ImageTensor& image, const PixelRect& rect) {
  if (rect.empty()) throw ShapeError("crop: empty rectangle");
  ImageTensor out(rect.height, rect.width);
  for (int y = 0; y < rect.height; ++y) {
    const int sy = reflect_index(rect.y + y, image.height());
    for (int x = 0; x < rect.width; ++x) {
      const int sx = reflect_index(rect.x + x, image.width());
      std::copy_n(image.pixel(sy, sx), 3, out.pixel(y, x));
    }
  }
  return out;
}

BinaryMask crop_zero(const BinaryMask& mask, const PixelRect& rect) {
  if (rect.empty()) throw ShapeError("crop: empty rectangle");
  BinaryMask out(rect.height, rect.width);
  for (int y = 0; y < rect.height; ++y)
    for (int x = 0; x < rect.width; ++x) {
      const int sy = rect.y + y, sx = rect.x + x;
      if (sy >= 0 && sy < mask.height() && sx >= 0 && sx < mask.width()) out.set(y, x, mask.at(sy, sx));
    }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
  if (image.height() == height && image.width() == width) return image;
  ImageTensor out(height, width);
  for (int y = 0; y < height; ++y) {
    const LinearTap ty = linear_tap(y, image.height(), height);
    for (int x = 0; x < width; ++x) {
      const LinearTap tx = linear_tap(x, image.width(), width);
      for (int c = 0; c < 3; ++c) {
        const float top = image.at(ty.i0, tx.i0, c) * (1 - tx.w1) + image.at(ty.i0, tx.i1, c) * tx.w1;
        const float bot = image.at(ty.i1, tx.i0, c) * (1 - tx.w1) + image.at(ty.i1, tx.i1, c) * tx.w1;
        out.at(y, x, c) = top * (1 - ty.w1) + bot * ty.w1;
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  if (mask.height() == height && mask.width() == width) return mask;
  BinaryMask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_tap(y, mask.height(), height);
    for (int x = 0; x < width; ++x) out.set(y, x, mask.at(sy, nearest_tap(x, mask.width(), width)));
  }
  return out;
}

EmbeddingMap resize_bilinear(const EmbeddingMap& map, int height, int width) {
  if (map.height() == height && map.width() == width) return map;
  EmbeddingMap out(map.channels(), height, width);
  for (int y = 0; y < height; ++y) {
    const LinearTap ty = linear_tap(y, map.height(), height);
    for (int x = 0; x < width; ++x) {
      const LinearTap tx = linear_tap(x, map.width(), width);
      for (int c = 0; c < map.channels(); ++c) {
        const float top = map.at(c, ty.i0, tx.i0) * (1 - tx.w1) + map.at(c, ty.i0, tx.i1) * tx.w1;
        const float bot = map.at(c, ty.i1, tx.i0) * (1 - tx.w1) + map.at(c, ty.i1, tx.i1) * tx.w1;
        out.at(c, y, x) = top * (1 - ty.w1) + bot * ty.w1;
      }
    }
  }
  return out;
}

EmbeddingMap project_embedding(const EmbeddingMap& map, const PixelRect& where, const PixelRect& rect, int height,
                               int width) {
  if (where.empty() || rect.empty()) throw ShapeError("project_embedding: empty rectangle");
  EmbeddingMap out(map.channels(), height, width);
  const float sy = static_cast<float>(rect.height) / height, sx = static_cast<float>(rect.width) / width;
  for (int y = 0; y < height; ++y) {
    const float fy = rect.y + (y + 0.5f) * sy;  // frame coordinate of the sample center
    if (fy < where.y || fy >= where.y + where.height) continue;
    float v = (fy - where.y) * map.height() / where.height - 0.5f;
    v = std::clamp(v, 0.f, static_cast<float>(map.height() - 1));
    const int v0 = static_cast<int>(v), v1 = std::min(v0 + 1, map.height() - 1);
    const float wv = v - v0;
    for (int x = 0; x < width; ++x) {
      const float fx = rect.x + (x + 0.5f) * sx;
      if (fx < where.x || fx >= where.x + where.width) continue;
      float u = (fx - where.x) * map.width() / where.width - 0.5f;
      u = std::clamp(u, 0.f, static_cast<float>(map.width() - 1));
      const int u0 = static_cast<int>(u), u1 = std::min(u0 + 1, map.width() - 1);
      const float wu = u - u0;
      for (int c = 0; c < map.channels(); ++c) {
        const float top = map.at(c, v0, u0) * (1 - wu) + map.at(c, v0, u1) * wu;
        const float bot = map.at(c, v1, u0) * (1 - wu) + map.at(c, v1, u1) * wu;
        out.at(c, y, x) = top * (1 - wv) + bot * wv;
      }
    }
  }
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) std::copy_n(image.pixel(y, image.width() - 1 - x), 3, out.pixel(y, x));
  return out;
}

BinaryMask flip_horizontal(const BinaryMask& mask) {
  BinaryMask out(mask.height(), mask.width());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out.set(y, x, mask.at(y, mask.width() - 1 - x));
  return out;
}

// Spatial flip only; left/right body-surface channels are not permuted.
EmbeddingMap flip_horizontal(const EmbeddingMap& map) {
  EmbeddingMap out(map.channels(), map.height(), map.width());
  for (int c = 0; c < map.channels(); ++c)
    for (int y = 0; y < map.height(); ++y)
      for (int x = 0; x < map.width(); ++x) out.at(c, y, x) = map.at(c, y, map.width() - 1 - x);
  return out;
}

bool is_grayscale(const ImageTensor& image) {
  constexpr float kTol = 1.f / 255.f;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const float* p = image.pixel(y, x);
      if (std::abs(p[0] - p[1]) >= kTol || std::abs(p[0] - p[2]) >= kTol || std::abs(p[1] - p[2]) >= kTol)
        return false;
    }
  return true;
}

}  // namespace realanon
