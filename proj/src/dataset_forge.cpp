#include "realanon/dataset_forge.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_set>

#include "realanon/annotations.hpp"
#include "realanon/errors.hpp"
#include "realanon/geometry.hpp"
#include "realanon/io.hpp"
#include "realanon/rng.hpp"

namespace realanon {

namespace {

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

std::string data_path(const std::string& file) { return std::string(REALANON_DATA_DIR) + "/" + file; }

}  // namespace

VertexPartition::VertexPartition(std::vector<std::string> part_names,
                                 const std::vector<std::vector<int>>& vertices_by_part)
    : names_(std::move(part_names)) {
  if (names_.size() != vertices_by_part.size()) throw ConfigError("partition: names and parts differ in count");
  for (std::size_t p = 0; p < vertices_by_part.size(); ++p)
    for (int v : vertices_by_part[p]) {
      if (v < 0) throw ConfigError("partition: negative vertex id");
      if (static_cast<std::size_t>(v) >= part_of_vertex_.size()) part_of_vertex_.resize(static_cast<std::size_t>(v) + 1, -1);
      if (part_of_vertex_[v] >= 0 && part_of_vertex_[v] != static_cast<int>(p))
        throw ConfigError("partition: vertex " + std::to_string(v) + " belongs to two parts");
      part_of_vertex_[v] = static_cast<int>(p);
    }
}

VertexPartition VertexPartition::from_json(const Json& j, const std::vector<std::string>& part_names) {
  std::vector<std::string> names = part_names;
  if (names.empty())
    for (const auto& [k, v] : j.items()) names.push_back(k);  // nlohmann orders keys alphabetically
  std::vector<std::vector<int>> parts;
  for (const auto& n : names) {
    if (!j.contains(n)) throw ConfigError("partition file lacks part '" + n + "'");
    parts.push_back(j.at(n).get<std::vector<int>>());
  }
  return VertexPartition(std::move(names), parts);
}

VertexPartition VertexPartition::load(const std::string& path, const std::vector<std::string>& part_names) {
  return from_json(read_json(path), part_names);
}

int VertexPartition::part_index(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

int VertexPartition::part_of(int vertex) const {
  if (vertex < 0 || static_cast<std::size_t>(vertex) >= part_of_vertex_.size() || part_of_vertex_[vertex] < 0)
    throw ConfigError("vertex id " + std::to_string(vertex) + " is not mapped to a body part");
  return part_of_vertex_[vertex];
}

std::vector<std::string> default_body_parts() {
  return read_json(data_path("body_parts.json")).at("parts").get<std::vector<std::string>>();
}

KeypointTable::KeypointTable(std::map<std::string, std::vector<std::string>> expected) : expected_(std::move(expected)) {}

KeypointTable KeypointTable::from_json(const Json& j) {
  std::map<std::string, std::vector<std::string>> rows;
  for (const auto& row : j.at("keypoints"))
    rows[row.at("name").get<std::string>()] = row.at("parts").get<std::vector<std::string>>();
  return KeypointTable(std::move(rows));
}

KeypointTable KeypointTable::defaults() { return from_json(read_json(data_path("keypoint_parts.json"))); }

double count_vertices_per_part(std::span<const int> vertex_ids, const VertexPartition& partition) {
  if (partition.part_count() == 0) throw ConfigError("empty partition");
  std::vector<std::unordered_set<int>> seen(static_cast<std::size_t>(partition.part_count()));
  for (int v : vertex_ids)
    if (v >= 0) seen[partition.part_of(v)].insert(v);
  std::size_t total = 0;
  for (const auto& s : seen) total += s.size();
  return static_cast<double>(total) / partition.part_count();
}

std::vector<int> semantic_partition(std::span<const int> vertex_ids, const VertexPartition& partition) {
  std::vector<int> out(vertex_ids.size(), -1);
  for (std::size_t i = 0; i < vertex_ids.size(); ++i)
    if (vertex_ids[i] >= 0) out[i] = partition.part_of(vertex_ids[i]);
  return out;
}

int keypoint_part_matches(std::span<const Keypoint> keypoints, std::span<const int> part_map, int height, int width,
                          const KeypointTable& table, const VertexPartition& partition, float min_score) {
  if (part_map.size() != static_cast<std::size_t>(height) * width) throw ShapeError("part map size mismatch");
  int matches = 0;
  for (const auto& kp : keypoints) {
    const auto row = table.rows().find(kp.name);
    if (row == table.rows().end() || kp.score < min_score) continue;
    const int x = static_cast<int>(std::floor(kp.x)), y = static_cast<int>(std::floor(kp.y));
    if (x < 0 || y < 0 || x >= width || y >= height) continue;
    const int part = part_map[static_cast<std::size_t>(y) * width + x];
    if (part < 0) continue;
    for (const auto& name : row->second)
      if (partition.part_index(name) == part) {
        ++matches;
        break;
      }
  }
  return matches;
}

CandidateRecord candidate_from_json(const Json& j, const std::string& base_dir) {
  CandidateRecord r;
  r.id = j.value("id", "");
  r.source_image_id = j.value("source_image_id", r.id);
  if (j.contains("confidence")) r.confidence = j.at("confidence").get<float>();
  if (j.contains("height")) r.height = j.at("height").get<int>();
  if (j.contains("width")) r.width = j.at("width").get<int>();
  if (j.contains("is_grayscale")) r.is_grayscale = j.at("is_grayscale").get<bool>();
  if (j.contains("image")) {
    r.image = io::load_image((std::filesystem::path(base_dir) / j.at("image").get<std::string>()).string());
    if (!r.height) r.height = r.image->height();
    if (!r.width) r.width = r.image->width();
  }
  if (j.contains("quality_score")) r.quality_score = j.at("quality_score").get<float>();
  if (j.contains("cse_vertex_ids")) r.cse_vertex_ids = j.at("cse_vertex_ids").get<std::vector<int>>();
  if (j.contains("instance_mask")) r.instance_mask = rle_decode(j.at("instance_mask"));
  if (j.contains("cse_mask")) r.cse_mask = rle_decode(j.at("cse_mask"));
  if (j.contains("keypoints")) {
    std::vector<Keypoint> kps;
    for (const auto& k : j.at("keypoints"))
      kps.push_back({k.at("name").get<std::string>(), k.at("x").get<float>(), k.at("y").get<float>(),
                     k.value("score", 1.f)});
    r.keypoints = std::move(kps);
  }
  return r;
}

Json to_json(const CandidateRecord& r) {
  Json j = {{"id", r.id}, {"source_image_id", r.source_image_id}};
  if (r.confidence) j["confidence"] = *r.confidence;
  if (r.height) j["height"] = *r.height;
  if (r.width) j["width"] = *r.width;
  if (r.is_grayscale) j["is_grayscale"] = *r.is_grayscale;
  if (r.quality_score) j["quality_score"] = *r.quality_score;
  if (r.cse_vertex_ids) j["cse_vertex_ids"] = *r.cse_vertex_ids;
  if (r.instance_mask) j["instance_mask"] = rle_encode(*r.instance_mask);
  if (r.cse_mask) j["cse_mask"] = rle_encode(*r.cse_mask);
  if (r.keypoints) {
    Json kps = Json::array();
    for (const auto& k : *r.keypoints) kps.push_back({{"name", k.name}, {"x", k.x}, {"y", k.y}, {"score", k.score}});
    j["keypoints"] = kps;
  }
  return j;
}

Json to_json(const FilterVerdict& v) {
  return {{"accepted", v.accepted}, {"failed_criteria", v.failed_criteria}, {"measurements", v.measurements}};
}

const std::vector<std::string>& fdh_criteria() {
  static const std::vector<std::string> ids = {"confidence",   "low_resolution", "grayscale",     "quality",
                                               "cse_vertices", "mask_iou",       "keypoint_match"};
  return ids;
}

FdhFilter::FdhFilter(FdhRules rules, VertexPartition partition, KeypointTable table)
    : rules_(rules), partition_(std::move(partition)), table_(std::move(table)) {
  if (partition_.part_count() == 0) throw ConfigError("FdhFilter needs a vertex partition");
}

FilterVerdict FdhFilter::operator()(const CandidateRecord& r) const {
  // Validate completeness before evaluating anything.
  if (!r.confidence) throw IncompleteRecordError("confidence");
  if (!r.height || !r.width) throw IncompleteRecordError(r.height ? "width" : "height");
  if (!r.is_grayscale && !r.image) throw IncompleteRecordError("is_grayscale");
  if (!r.quality_score) throw IncompleteRecordError("quality_score");
  if (!r.cse_vertex_ids) throw IncompleteRecordError("cse_vertex_ids");
  if (!r.instance_mask) throw IncompleteRecordError("instance_mask");
  if (!r.cse_mask) throw IncompleteRecordError("cse_mask");
  if (!r.keypoints) throw IncompleteRecordError("keypoints");
  const int h = *r.height, w = *r.width;
  if (r.cse_vertex_ids->size() != static_cast<std::size_t>(h) * w)
    throw ShapeError("record " + r.id + ": cse_vertex_ids does not cover height x width");

  FilterVerdict v;
  auto check = [&](const std::string& id, double value, bool fails) {
    v.measurements[id] = value;
    if (fails) v.failed_criteria.push_back(id);
  };
  check("confidence", *r.confidence, *r.confidence < rules_.min_confidence);
  const bool small = rules_.area_mode == AreaMode::Product
                         ? static_cast<long>(h) * w < static_cast<long>(rules_.min_height) * rules_.min_width
                         : (h < rules_.min_height || w < rules_.min_width);
  check("low_resolution", static_cast<double>(h) * w, small);
  const bool gray = r.is_grayscale ? *r.is_grayscale : is_grayscale(*r.image);
  check("grayscale", gray ? 1.0 : 0.0, gray);
  check("quality", *r.quality_score, *r.quality_score < rules_.min_quality);
  const double vpp = count_vertices_per_part(*r.cse_vertex_ids, partition_);
  check("cse_vertices", vpp, vpp < rules_.min_vertices_per_part);
  double overlap = 0.0;
  try {
    overlap = iou(*r.instance_mask, *r.cse_mask);
  } catch (const DegenerateGeometryError&) {
    overlap = 0.0;  // both masks empty: nothing agrees
  }
  check("mask_iou", overlap, overlap < rules_.min_mask_iou);
  const auto parts = semantic_partition(*r.cse_vertex_ids, partition_);
  const int matches = keypoint_part_matches(*r.keypoints, parts, h, w, table_, partition_, rules_.min_keypoint_score);
  check("keypoint_match", matches, matches < rules_.min_keypoint_matches);
  v.accepted = v.failed_criteria.empty();
  return v;
}

Fdf256Result build_fdf256(const FaceRecord& record, int min_size, int output_size) {
  if (record.image.empty()) throw ShapeError("build_fdf256: empty source image");
  const Box b = record.bbox.clamped(record.image.width(), record.image.height());
  Fdf256Result res;
  const int x0 = static_cast<int>(std::round(b.x0)), y0 = static_cast<int>(std::round(b.y0));
  const int x1 = static_cast<int>(std::round(b.x1)), y1 = static_cast<int>(std::round(b.y1));
  const int w = x1 - x0, h = y1 - y0;
  if (w < min_size || h < min_size) {
    res.reason = "face region " + std::to_string(w) + "x" + std::to_string(h) + " is smaller than " +
                 std::to_string(min_size) + "x" + std::to_string(min_size);
    return res;
  }
  res.accepted = true;
  res.face = resize_bilinear(crop_reflect(record.image, {x0, y0, w, h}), output_size, output_size);
  return res;
}

std::string assign_split(const std::string& source_image_id, double val_fraction) {
  if (val_fraction < 0 || val_fraction > 1) throw ConfigError("val_fraction must lie in [0, 1]");
  std::uint64_t hsh = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : source_image_id) {
    hsh ^= c;
    hsh *= 1099511628211ull;
  }
  // FNV high bits barely move for ids differing in the last character.
  const double u = static_cast<double>(mix_seed(hsh, 0) >> 11) * 0x1.0p-53;
  return u < val_fraction ? "val" : "train";
}

}  // namespace realanon
