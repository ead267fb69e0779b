#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "realanon/image.hpp"

namespace realanon {

using Json = nlohmann::json;

/// Mesh-vertex to body-part assignment (26 regions for the full body model).
class VertexPartition {
 public:
  VertexPartition() = default;
  /// `vertices_by_part[p]` lists the vertex ids of part p; a vertex may
  /// belong to one part only.
  VertexPartition(std::vector<std::string> part_names, const std::vector<std::vector<int>>& vertices_by_part);
  /// Reads {"partName": [vertex ids], ...}; parts are ordered by `part_names`
  /// when given (every name must be present), else alphabetically.
  static VertexPartition from_json(const Json& j, const std::vector<std::string>& part_names = {});
  static VertexPartition load(const std::string& path, const std::vector<std::string>& part_names = {});

  int part_count() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  int part_index(const std::string& name) const;
  /// Part of a vertex; throws ConfigError for unmapped ids.
  int part_of(int vertex) const;

 private:
  std::vector<std::string> names_;
  std::vector<int> part_of_vertex_;  // -1 = unmapped
};

/// The 26 region names (24 body-model parts plus both eyes), from data/body_parts.json.
std::vector<std::string> default_body_parts();

/// Expected body parts per keypoint name.
class KeypointTable {
 public:
  KeypointTable() = default;
  explicit KeypointTable(std::map<std::string, std::vector<std::string>> expected);
  static KeypointTable from_json(const Json& j);
  /// The 17-row table shipped in data/keypoint_parts.json.
  static KeypointTable defaults();
  const std::map<std::string, std::vector<std::string>>& rows() const { return expected_; }
  std::size_t size() const { return expected_.size(); }

 private:
  std::map<std::string, std::vector<std::string>> expected_;
};

struct Keypoint {
  std::string name;
  float x = 0, y = 0;
  float score = 1;
};

/// Average over all parts of the number of distinct vertex ids observed
/// in that part; ids < 0 are background. Absent parts count as zero.
double count_vertices_per_part(std::span<const int> vertex_ids, const VertexPartition& partition);

/// Per-pixel part index (-1 = background).
std::vector<int> semantic_partition(std::span<const int> vertex_ids, const VertexPartition& partition);

/// Number of keypoints whose pixel lies in one of their expected parts.
/// Keypoints off the image, unknown to the table or below `min_score` do not match.
int keypoint_part_matches(std::span<const Keypoint> keypoints, std::span<const int> part_map, int height, int width,
                          const KeypointTable& table, const VertexPartition& partition, float min_score = 0.f);

/// Annotated candidate crop. Optional fields model missing annotations.
struct CandidateRecord {
  std::string id;
  std::string source_image_id;
  std::optional<float> confidence;
  std::optional<int> height, width;
  std::optional<bool> is_grayscale;   // derived from `image` when absent
  std::optional<ImageTensor> image;
  std::optional<float> quality_score;
  std::optional<std::vector<int>> cse_vertex_ids;  // height * width, row-major, -1 = background
  std::optional<BinaryMask> instance_mask;
  std::optional<BinaryMask> cse_mask;
  std::optional<std::vector<Keypoint>> keypoints;
};

/// Parses a record; "image" is a path relative to `base_dir`, masks are
/// run-length encoded as in the annotation format.
CandidateRecord candidate_from_json(const Json& j, const std::string& base_dir = ".");
Json to_json(const CandidateRecord& r);

enum class AreaMode { Product, PerDimension };

/// Rejection thresholds; each criterion fires on "strictly less than".
struct FdhRules {
  float min_confidence = 0.98f;
  int min_height = 144;
  int min_width = 80;
  AreaMode area_mode = AreaMode::Product;
  float min_quality = 3.0f;
  double min_vertices_per_part = 135.0;
  double min_mask_iou = 0.5;
  int min_keypoint_matches = 8;
  float min_keypoint_score = 0.f;
};

struct FilterVerdict {
  bool accepted = true;
  std::vector<std::string> failed_criteria;  // ids in evaluation order
  std::map<std::string, double> measurements;
};

Json to_json(const FilterVerdict& v);

/// Criterion ids, in evaluation order.
const std::vector<std::string>& fdh_criteria();

/**
 * Full-body dataset filter. Every criterion is evaluated and all failures
 * are reported. Throws IncompleteRecordError naming the first missing field.
 */
class FdhFilter {
 public:
  FdhFilter(FdhRules rules, VertexPartition partition, KeypointTable table = KeypointTable::defaults());
  FilterVerdict operator()(const CandidateRecord& record) const;
  const FdhRules& rules() const { return rules_; }

 private:
  FdhRules rules_;
  VertexPartition partition_;
  KeypointTable table_;
};

struct FaceRecord {
  std::string id;
  std::string source_image_id;
  ImageTensor image;  // source frame
  Box bbox;           // face box in frame pixels
};

struct Fdf256Result {
  bool accepted = false;
  std::string reason;
  ImageTensor face;  // output_size x output_size when accepted
};

/// Rejects faces whose box (clamped to the frame) is narrower or shorter
/// than `min_size`; otherwise crops the box and resamples it bilinearly.
Fdf256Result build_fdf256(const FaceRecord& record, int min_size = 64, int output_size = 256);

/// "train" or "val", decided by a hash of the source image id so that all
/// crops of one source image land in the same split.
std::string assign_split(const std::string& source_image_id, double val_fraction);

}  // namespace realanon
