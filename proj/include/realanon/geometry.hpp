#pragma once

#include "realanon/image.hpp"

namespace realanon {

/// Intersection over union of two boxes. Throws DegenerateGeometryError
/// when both boxes have zero area.
double iou(const Box& a, const Box& b);

/// Intersection over union of two same-shape masks. Throws
/// DegenerateGeometryError when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace realanon
