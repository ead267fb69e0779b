#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "realanon/detection.hpp"

namespace realanon {

using Json = nlohmann::json;

/// Row-wise run-length encoding: {"size": [H, W], "rows": [[start, len, ...], ...]}.
Json rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const Json& j);

/// Annotation-stub record: {source, bbox, confidence, mask?, embedding_file?}.
/// `embedding_file` (a .npy aligned to the box) is resolved relative to
/// `base_dir`; an inline {"embedding": {"shape": [C, H, W], "data": [...]}}
/// is accepted as well. Untrusted input should pass allow_files = false.
RawDetection raw_from_json(const Json& j, const std::string& base_dir = ".", bool allow_files = true);
/// Writes the embedding inline unless a file name is given.
Json to_json(const RawDetection& d, const std::optional<std::string>& embedding_file = std::nullopt);

Json to_json(const FusedDetection& d);
FusedDetection fused_from_json(const Json& j, int frame_height, int frame_width);

/// Reads a JSON array (or JSON-lines) file of annotation-stub records.
std::vector<RawDetection> load_annotations(const std::string& path);

/// Deterministic stub detector that replays annotation records, optionally
/// restricted to a single source family.
class AnnotationAdapter : public DetectorAdapter {
 public:
  AnnotationAdapter(std::string identity, std::vector<RawDetection> records,
                    std::optional<DetectionSource> only = std::nullopt);
  bool thread_safe() const override { return true; }

 protected:
  std::vector<RawDetection> detect(const ImageTensor& image) override;

 private:
  std::vector<RawDetection> records_;
};

}  // namespace realanon
