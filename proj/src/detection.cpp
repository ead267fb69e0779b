#include "realanon/detection.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "realanon/errors.hpp"
#include "realanon/geometry.hpp"

namespace realanon {

const char* to_string(DetectionSource s) {
  switch (s) {
    case DetectionSource::Face: return "face";
    case DetectionSource::InstanceSegmentation: return "instance_seg";
    case DetectionSource::DensePose: return "dense_pose";
  }
  return "?";
}

const char* to_string(Category c) {
  switch (c) {
    case Category::PersonWithDense: return "person_with_dense";
    case Category::PersonPlain: return "person_plain";
    case Category::FaceOnly: return "face_only";
  }
  return "?";
}

DetectionSource source_from_string(const std::string& s) {
  if (s == "face") return DetectionSource::Face;
  if (s == "instance_seg") return DetectionSource::InstanceSegmentation;
  if (s == "dense_pose") return DetectionSource::DensePose;
  throw ConfigError("unknown detection source '" + s + "'");
}

Category category_from_string(const std::string& s) {
  if (s == "person_with_dense") return Category::PersonWithDense;
  if (s == "person_plain") return Category::PersonPlain;
  if (s == "face_only") return Category::FaceOnly;
  throw ConfigError("unknown category '" + s + "'");
}

void RawDetection::validate() const {
  if (!bbox.valid()) throw ConfigError("detection box must satisfy x0<x1, y0<y1");
  if (confidence < 0.f || confidence > 1.f) throw ConfigError("detection confidence outside [0,1]");
  const bool is_face = source == DetectionSource::Face;
  if (is_face == segmentation.has_value())
    throw ConfigError("segmentation must be present exactly for non-face detections");
  if ((source == DetectionSource::DensePose) != dense_embedding.has_value())
    throw ConfigError("dense embedding must be present exactly for dense-pose detections");
}

namespace {

double overlap(const RawDetection& a, const RawDetection& b) {
  try {
    if (a.segmentation && b.segmentation) return iou(*a.segmentation, *b.segmentation);
    return iou(a.bbox, b.bbox);
  } catch (const DegenerateGeometryError&) {
    return 0.0;
  }
}

bool center_inside(const Box& box, const BinaryMask& region) {
  const int x = static_cast<int>(std::floor(box.center_x()));
  const int y = static_cast<int>(std::floor(box.center_y()));
  if (x < 0 || y < 0 || x >= region.width() || y >= region.height()) return false;
  return region.at(y, x) != 0;
}

}  // namespace

std::vector<FusedDetection> fuse(const std::vector<RawDetection>& raw, int frame_height, int frame_width,
                                 double iou_merge) {
  if (!(iou_merge > 0.0 && iou_merge < 1.0)) throw ConfigError("iou_merge must lie in (0,1)");
  std::vector<int> dense, seg, faces;
  for (int i = 0; i < static_cast<int>(raw.size()); ++i) {
    switch (raw[i].source) {
      case DetectionSource::DensePose: dense.push_back(i); break;
      case DetectionSource::InstanceSegmentation: seg.push_back(i); break;
      case DetectionSource::Face: faces.push_back(i); break;
    }
  }

  // Candidate cross-source pairs above the merge threshold, best first.
  std::vector<std::tuple<double, int, int>> pairs;
  for (int d : dense)
    for (int s : seg) {
      const double v = overlap(raw[d], raw[s]);
      if (v > iou_merge) pairs.emplace_back(v, d, s);
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<int> partner(raw.size(), -1);
  for (const auto& [v, d, s] : pairs) {
    if (partner[d] >= 0 || partner[s] >= 0) continue;
    partner[d] = s;
    partner[s] = d;
  }

  auto region_of = [&](const RawDetection& r) {
    if (r.segmentation) return *r.segmentation;
    return BinaryMask::from_box(frame_height, frame_width, r.bbox);
  };

  std::vector<FusedDetection> out;
  for (int d : dense) {
    FusedDetection f;
    f.category = Category::PersonWithDense;
    f.region = region_of(raw[d]);
    f.bbox = raw[d].bbox.clamped(frame_width, frame_height);
    f.confidence = raw[d].confidence;
    f.dense_embedding = raw[d].dense_embedding;
    f.contributors = {d};
    if (const int s = partner[d]; s >= 0) {
      f.region |= region_of(raw[s]);
      f.bbox = f.bbox.united(raw[s].bbox.clamped(frame_width, frame_height));
      f.confidence = std::max(f.confidence, raw[s].confidence);
      f.contributors.push_back(s);
    }
    out.push_back(std::move(f));
  }
  for (int s : seg) {
    if (partner[s] >= 0) continue;
    FusedDetection f;
    f.category = Category::PersonPlain;
    f.region = region_of(raw[s]);
    f.bbox = raw[s].bbox.clamped(frame_width, frame_height);
    f.confidence = raw[s].confidence;
    f.contributors = {s};
    out.push_back(std::move(f));
  }
  const std::size_t n_persons = out.size();
  for (int fi : faces) {
    const Box box = raw[fi].bbox.clamped(frame_width, frame_height);
    bool inside = false;
    for (std::size_t p = 0; p < n_persons && !inside; ++p) inside = center_inside(raw[fi].bbox, out[p].region);
    if (inside || !box.valid()) continue;
    FusedDetection f;
    f.category = Category::FaceOnly;
    f.bbox = box;
    f.region = BinaryMask::from_box(frame_height, frame_width, box);
    f.confidence = raw[fi].confidence;
    f.contributors = {fi};
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<RawDetection> to_raw(const FusedDetection& fused) {
  std::vector<RawDetection> out;
  switch (fused.category) {
    case Category::PersonWithDense: {
      RawDetection d{DetectionSource::DensePose, fused.bbox, fused.confidence, fused.region, fused.dense_embedding};
      RawDetection s{DetectionSource::InstanceSegmentation, fused.bbox, fused.confidence, fused.region, {}};
      out.push_back(std::move(d));
      out.push_back(std::move(s));
      break;
    }
    case Category::PersonPlain:
      out.push_back({DetectionSource::InstanceSegmentation, fused.bbox, fused.confidence, fused.region, {}});
      break;
    case Category::FaceOnly:
      out.push_back({DetectionSource::Face, fused.bbox, fused.confidence, {}, {}});
      break;
  }
  return out;
}

std::vector<RawDetection> DetectorAdapter::invoke(const ImageTensor& image) {
  std::unique_lock<std::mutex> lock(mutex_, std::defer_lock);
  if (!thread_safe()) lock.lock();
  return detect(image);
}

float SourceThresholds::of(DetectionSource s) const {
  switch (s) {
    case DetectionSource::Face: return face;
    case DetectionSource::InstanceSegmentation: return instance_segmentation;
    case DetectionSource::DensePose: return dense_pose;
  }
  return 1.f;
}

SourceThresholds SourceThresholds::profile(const std::string& name) {
  if (name == "default") return default_profile();
  if (name == "market1501") return market1501();
  throw ConfigError("unknown detection profile '" + name + "'");
}

EnsembleResult detect_all(const ImageTensor& image, std::span<DetectorAdapter* const> adapters,
                          const SourceThresholds& thresholds) {
  if (adapters.empty()) throw ConfigError("detect_all: no adapters configured");
  EnsembleResult result;
  for (DetectorAdapter* adapter : adapters) {
    std::vector<RawDetection> dets;
    try {
      dets = adapter->invoke(image);
    } catch (const std::exception& e) {
      result.failures.push_back({adapter->identity(), e.what()});
      continue;
    }
    for (auto& d : dets) {
      const float thr = std::max(thresholds.of(d.source), adapter->confidence_threshold());
      if (d.confidence < thr) continue;
      d.bbox = d.bbox.clamped(image.width(), image.height());
      if (!d.bbox.valid()) continue;
      result.detections.push_back(std::move(d));
    }
  }
  return result;
}

}  // namespace realanon
