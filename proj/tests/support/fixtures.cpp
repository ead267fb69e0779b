#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace realanon::testing {

BinaryMask ellipse_mask(int height, int width, double cx, double cy, double rx, double ry) {
  BinaryMask m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) m.set(y, x, true);
    }
  return m;
}

ImageTensor random_image(int height, int width, Rng& rng) {
  ImageTensor img(height, width);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

BinaryMask random_mask(int height, int width, Rng& rng, double p_keep) {
  BinaryMask m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.set(y, x, rng.uniform() < p_keep);
  return m;
}

namespace {

BinaryMask box_pixels(int height, int width, const Box& b) {
  BinaryMask m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      // A pixel belongs to the box when its unit square intersects it.
      if (x + 1 > b.x0 && x < b.x1 && y + 1 > b.y0 && y < b.y1) m.set(y, x, true);
    }
  return m;
}

double counted_overlap(const BinaryMask& a, const BinaryMask& b) {
  long inter = 0, uni = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      inter += a.at(y, x) && b.at(y, x);
      uni += a.at(y, x) || b.at(y, x);
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double box_overlap(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min<double>(a.x1, b.x1) - std::max<double>(a.x0, b.x0));
  const double ih = std::max(0.0, std::min<double>(a.y1, b.y1) - std::max<double>(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = static_cast<double>(a.x1 - a.x0) * (a.y1 - a.y0) + static_cast<double>(b.x1 - b.x0) * (b.y1 - b.y0) - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

}  // namespace

std::vector<OracleDetection> oracle_fuse(const std::vector<RawDetection>& raw, int height, int width,
                                         double threshold) {
  const int n = static_cast<int>(raw.size());
  std::vector<std::vector<double>> ov(n, std::vector<double>(n, -1.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (raw[i].source != DetectionSource::DensePose || raw[j].source != DetectionSource::InstanceSegmentation) continue;
      ov[i][j] = raw[i].segmentation && raw[j].segmentation ? counted_overlap(*raw[i].segmentation, *raw[j].segmentation)
                                                            : box_overlap(raw[i].bbox, raw[j].bbox);
    }
  std::vector<int> partner(n, -1);
  for (;;) {
    int bi = -1, bj = -1;
    double best = threshold;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (partner[i] < 0 && partner[j] < 0 && ov[i][j] > best) {
          best = ov[i][j];
          bi = i;
          bj = j;
        }
    if (bi < 0) break;
    partner[bi] = bj;
    partner[bj] = bi;
  }
  auto region = [&](const RawDetection& r) {
    return r.segmentation ? *r.segmentation : box_pixels(height, width, r.bbox);
  };
  std::vector<OracleDetection> out;
  for (int i = 0; i < n; ++i) {
    if (raw[i].source == DetectionSource::DensePose) {
      OracleDetection o{Category::PersonWithDense, region(raw[i]), {i}};
      if (partner[i] >= 0) {
        const BinaryMask other = region(raw[partner[i]]);
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x)
            if (other.at(y, x)) o.region.set(y, x, true);
        o.contributors.push_back(partner[i]);
        std::sort(o.contributors.begin(), o.contributors.end());
      }
      out.push_back(std::move(o));
    } else if (raw[i].source == DetectionSource::InstanceSegmentation && partner[i] < 0) {
      out.push_back({Category::PersonPlain, region(raw[i]), {i}});
    }
  }
  const std::size_t persons = out.size();
  for (int i = 0; i < n; ++i) {
    if (raw[i].source != DetectionSource::Face) continue;
    const Box& b = raw[i].bbox;
    const int cx = static_cast<int>(std::floor((b.x0 + b.x1) / 2)), cy = static_cast<int>(std::floor((b.y0 + b.y1) / 2));
    bool covered = false;
    for (std::size_t p = 0; p < persons; ++p)
      if (cx >= 0 && cy >= 0 && cx < width && cy < height && out[p].region.at(cy, cx)) covered = true;
    if (covered) continue;
    Box c{std::clamp<float>(b.x0, 0, width), std::clamp<float>(b.y0, 0, height), std::clamp<float>(b.x1, 0, width),
          std::clamp<float>(b.y1, 0, height)};
    if (!(c.x1 > c.x0 && c.y1 > c.y0)) continue;
    out.push_back({Category::FaceOnly, box_pixels(height, width, c), {i}});
  }
  return out;
}

std::vector<RawDetection> random_scene(Rng& rng, int height, int width, int max_detections) {
  std::vector<RawDetection> raw;
  auto dense_crop = [](const Box& b) {
    DenseEmbeddingCrop c;
    c.where = {static_cast<int>(b.x0), static_cast<int>(b.y0), std::max(1, static_cast<int>(b.width())),
               std::max(1, static_cast<int>(b.height()))};
    c.map = EmbeddingMap(EmbeddingMap::kDenseChannels, 4, 4, 0.5f);
    return c;
  };
  auto person = [&](DetectionSource src, const BinaryMask& m) {
    RawDetection d;
    d.source = src;
    d.segmentation = m;
    d.bbox = m.bounds();
    d.confidence = static_cast<float>(0.5 + 0.5 * rng.uniform());
    if (src == DetectionSource::DensePose) d.dense_embedding = dense_crop(d.bbox);
    return d;
  };
  const int target = rng.uniform_int(0, max_detections);
  std::vector<Box> heads;
  while (static_cast<int>(raw.size()) < target) {
    const double roll = rng.uniform();
    if (roll < 0.65) {
      const double cx = rng.uniform() * width, cy = rng.uniform() * height;
      const double rx = 3 + rng.uniform() * width / 4, ry = 5 + rng.uniform() * height / 3;
      const BinaryMask m = ellipse_mask(height, width, cx, cy, rx, ry);
      if (!m.any()) continue;
      const double kind = rng.uniform();
      if (kind < 0.5 && static_cast<int>(raw.size()) + 2 <= target) {
        // Both body detectors see this person, with a jittered second mask.
        const double j = rng.uniform() * 0.6;
        const BinaryMask m2 = ellipse_mask(height, width, cx + j * rx * (rng.uniform() - 0.5) * 2,
                                           cy + j * ry * (rng.uniform() - 0.5), rx * (1 + 0.3 * (rng.uniform() - 0.5)), ry);
        if (!m2.any()) continue;
        raw.push_back(person(DetectionSource::DensePose, m));
        raw.push_back(person(DetectionSource::InstanceSegmentation, m2));
      } else {
        raw.push_back(person(kind < 0.75 ? DetectionSource::DensePose : DetectionSource::InstanceSegmentation, m));
      }
      const Box b = m.bounds();
      heads.push_back({b.center_x() - 2, b.y0, b.center_x() + 2, b.y0 + 4});
    } else {
      RawDetection f;
      f.source = DetectionSource::Face;
      if (!heads.empty() && rng.uniform() < 0.5) {
        f.bbox = heads[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(heads.size()) - 1))];
      } else {
        const float x = static_cast<float>(rng.uniform() * (width - 4)), y = static_cast<float>(rng.uniform() * (height - 4));
        f.bbox = {x, y, x + 2 + static_cast<float>(rng.uniform() * 6), y + 2 + static_cast<float>(rng.uniform() * 6)};
      }
      f.confidence = static_cast<float>(rng.uniform());
      raw.push_back(f);
    }
  }
  return raw;
}

bool fusion_matches_oracle(const std::vector<FusedDetection>& fused, const std::vector<OracleDetection>& oracle,
                           std::string* why) {
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (fused.size() != oracle.size())
    return fail("count " + std::to_string(fused.size()) + " vs oracle " + std::to_string(oracle.size()));
  std::vector<bool> used(oracle.size(), false);
  for (const auto& f : fused) {
    std::vector<int> c = f.contributors;
    std::sort(c.begin(), c.end());
    bool found = false;
    for (std::size_t k = 0; k < oracle.size() && !found; ++k) {
      if (used[k] || oracle[k].contributors != c) continue;
      if (oracle[k].category != f.category) return fail("category differs for contributors starting " + std::to_string(c[0]));
      if (!(oracle[k].region == f.region)) return fail("region differs for contributors starting " + std::to_string(c[0]));
      used[k] = found = true;
    }
    if (!found) return fail("no oracle detection with the same contributors");
  }
  return true;
}

VertexPartition fixture_partition() {
  const auto names = default_body_parts();
  std::vector<std::vector<int>> parts(names.size());
  for (std::size_t p = 0; p < names.size(); ++p)
    for (int j = 0; j < 400; ++j) parts[p].push_back(static_cast<int>(p) * 1000 + j);
  return VertexPartition(names, parts);
}

CandidateRecord build_record(const std::string& id, const RecordSpec& spec) {
  const int h = spec.height, w = spec.width;
  const auto names = default_body_parts();
  const VertexPartition partition = fixture_partition();
  CandidateRecord r;
  r.id = id;
  r.source_image_id = "src-" + id;
  r.confidence = spec.confidence;
  r.height = h;
  r.width = w;
  r.quality_score = spec.quality;
  if (spec.derive_grayscale) {
    ImageTensor img(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float g = static_cast<float>((x + y) % 7) / 7.f;
        img.at(y, x, 0) = g;
        img.at(y, x, 1) = spec.grayscale ? g : 0.5f * g;
        img.at(y, x, 2) = g;
      }
    r.image = img;
  } else {
    r.is_grayscale = spec.grayscale;
  }

  // Part p occupies a contiguous run of pixels (row-major) with distinct ids.
  std::vector<int> ids(static_cast<std::size_t>(h) * w, -1);
  std::vector<std::size_t> first_pixel(names.size());
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < names.size(); ++p) {
    first_pixel[p] = cursor;
    for (int j = 0; j < spec.vertices_per_part[p]; ++j) ids.at(cursor++) = static_cast<int>(p) * 1000 + j;
  }
  const std::size_t background = ids.size() - 1;
  r.cse_vertex_ids = ids;

  BinaryMask inst(h, w), cse(h, w);
  for (int i = 0; i < 400; ++i) inst.set(i / w, i % w, true);
  for (int i = 0; i < spec.cse_pixels; ++i) cse.set(i / w, i % w, true);
  r.instance_mask = inst;
  r.cse_mask = cse;

  std::vector<Keypoint> kps;
  int placed = 0;
  const KeypointTable table = KeypointTable::defaults();
  for (const auto& [name, parts] : table.rows()) {
    std::size_t pixel = background;
    if (placed < spec.keypoint_matches) pixel = first_pixel[static_cast<std::size_t>(partition.part_index(parts.front()))];
    kps.push_back({name, static_cast<float>(pixel % w) + 0.5f, static_cast<float>(pixel / w) + 0.5f, 0.9f});
    ++placed;
  }
  r.keypoints = kps;
  return r;
}

std::vector<FilterFixture> filter_fixtures() {
  std::vector<FilterFixture> f;
  auto add = [&](const std::string& name, RecordSpec spec, std::vector<std::string> expected) {
    f.push_back({name, build_record(name, spec), std::move(expected)});
  };
  RecordSpec s;
  add("clean", s, {});
  s = {}; s.confidence = 0.97f; add("confidence_0.97", s, {"confidence"});
  s = {}; s.confidence = 0.98f; add("confidence_0.98", s, {});
  s = {}; s.vertices_per_part.assign(26, 134); add("vertices_134", s, {"cse_vertices"});
  s = {}; s.vertices_per_part.assign(26, 135); add("vertices_135", s, {});
  s = {}; s.vertices_per_part.assign(26, 135); s.vertices_per_part[25] = 134; add("vertices_134.96", s, {"cse_vertices"});
  s = {}; s.keypoint_matches = 7; add("keypoints_7", s, {"keypoint_match"});
  s = {}; s.keypoint_matches = 8; add("keypoints_8", s, {});
  s = {}; s.cse_pixels = 196; add("mask_iou_0.49", s, {"mask_iou"});
  s = {}; s.cse_pixels = 200; add("mask_iou_0.50", s, {});
  s = {}; s.height = 143; s.width = 80; add("area_143x80", s, {"low_resolution"});
  s = {}; s.height = 144; s.width = 80; add("area_144x80", s, {});
  s = {}; s.height = 200; s.width = 60; add("area_200x60_product", s, {});
  s = {}; s.grayscale = true; add("grayscale_flag", s, {"grayscale"});
  s = {}; s.grayscale = true; s.derive_grayscale = true; add("grayscale_image", s, {"grayscale"});
  s = {}; s.derive_grayscale = true; add("color_image", s, {});
  s = {}; s.quality = 2.9f; add("quality_2.9", s, {"quality"});
  s = {}; s.quality = 3.0f; add("quality_3.0", s, {});
  s = {}; s.confidence = 0.97f; s.quality = 2.9f; s.keypoint_matches = 7;
  add("three_failures", s, {"confidence", "quality", "keypoint_match"});
  s = {}; s.confidence = 0.5f; s.height = 100; s.width = 80; s.grayscale = true; s.quality = 1.f;
  s.vertices_per_part.assign(26, 10); s.cse_pixels = 50; s.keypoint_matches = 0;
  add("everything_fails", s, {"confidence", "low_resolution", "grayscale", "quality", "cse_vertices", "mask_iou",
                              "keypoint_match"});
  return f;
}

std::array<float, 3> ColorSynthesizer::color_of(const LatentCode& z) {
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (float v : z.z) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix_seed(h, bits);
  }
  std::array<float, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = 0.1f + 0.8f * static_cast<float>((mix_seed(h, k) >> 11) * 0x1.0p-53);
  return c;
}

ImageTensor ColorSynthesizer::generate(GeneratorId id, const ImageTensor& crop, const BinaryMask&, const EmbeddingMap*,
                                       const LatentCode& z, const StyleEdit&) {
  calls.push_back(id);
  ImageTensor out(crop.height(), crop.width());
  const auto c = color_of(z);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = c[k];
  return out;
}

FusedDetection make_detection(const BinaryMask& region, Category category) {
  FusedDetection d;
  d.category = category;
  d.region = region;
  d.bbox = region.bounds();
  d.confidence = 0.9f;
  if (category == Category::PersonWithDense) {
    const Box b = d.bbox;
    d.dense_embedding = DenseEmbeddingCrop{{static_cast<int>(b.x0), static_cast<int>(b.y0), static_cast<int>(b.width()),
                                            static_cast<int>(b.height())},
                                           EmbeddingMap(EmbeddingMap::kDenseChannels, 8, 8, 0.25f)};
  }
  return d;
}

}  // namespace realanon::testing
