#include "realanon/geometry.hpp"

#include <algorithm>

#include "realanon/errors.hpp"

namespace realanon {

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, static_cast<double>(std::min(a.x1, b.x1)) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, static_cast<double>(std::min(a.y1, b.y1)) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  if (uni <= 0) throw DegenerateGeometryError("iou: both boxes are empty");
  return inter / uni;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ShapeError("iou: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    inter += va[i] & vb[i];
    uni += va[i] | vb[i];
  }
  if (uni == 0) throw DegenerateGeometryError("iou: both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace realanon
