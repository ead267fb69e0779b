#include "realanon/annotations.hpp"

#include <filesystem>
#include <fstream>

#include "realanon/errors.hpp"
#include "realanon/io.hpp"

namespace realanon {

Json rle_encode(const BinaryMask& mask) {
  Json rows = Json::array();
  for (int y = 0; y < mask.height(); ++y) {
    Json runs = Json::array();
    int x = 0;
    while (x < mask.width()) {
      if (!mask.at(y, x)) {
        ++x;
        continue;
      }
      const int start = x;
      while (x < mask.width() && mask.at(y, x)) ++x;
      runs.push_back(start);
      runs.push_back(x - start);
    }
    rows.push_back(std::move(runs));
  }
  return {{"size", {mask.height(), mask.width()}}, {"rows", rows}};
}

BinaryMask rle_decode(const Json& j) {
  const int h = j.at("size").at(0).get<int>(), w = j.at("size").at(1).get<int>();
  BinaryMask mask(h, w);
  const Json& rows = j.at("rows");
  if (static_cast<int>(rows.size()) != h) throw IoError("rle: row count does not match size");
  for (int y = 0; y < h; ++y) {
    const Json& runs = rows[y];
    if (runs.size() % 2 != 0) throw IoError("rle: odd run list");
    for (std::size_t k = 0; k < runs.size(); k += 2) {
      const int start = runs[k].get<int>(), len = runs[k + 1].get<int>();
      if (start < 0 || len < 0 || start + len > w) throw IoError("rle: run outside row");
      for (int x = start; x < start + len; ++x) mask.set(y, x, true);
    }
  }
  return mask;
}

namespace {

Json box_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

Box box_from(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("bbox must be [x0, y0, x1, y1]");
  return {j[0].get<float>(), j[1].get<float>(), j[2].get<float>(), j[3].get<float>()};
}

PixelRect embedding_rect(const Box& b) {
  const int x0 = static_cast<int>(std::floor(b.x0)), y0 = static_cast<int>(std::floor(b.y0));
  const int x1 = static_cast<int>(std::ceil(b.x1)), y1 = static_cast<int>(std::ceil(b.y1));
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace

RawDetection raw_from_json(const Json& j, const std::string& base_dir, bool allow_files) {
  RawDetection d;
  d.source = source_from_string(j.at("source").get<std::string>());
  d.bbox = box_from(j.at("bbox"));
  d.confidence = j.at("confidence").get<float>();
  if (j.contains("mask") && !j["mask"].is_null()) d.segmentation = rle_decode(j["mask"]);
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    const Json& e = j["embedding"];
    const auto shape = e.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw IoError("inline embedding shape must be [C, H, W]");
    EmbeddingMap map(shape[0], shape[1], shape[2]);
    const auto data = e.at("data").get<std::vector<float>>();
    if (data.size() != map.values().size()) throw IoError("inline embedding data does not match its shape");
    std::copy(data.begin(), data.end(), map.values().begin());
    d.dense_embedding = DenseEmbeddingCrop{embedding_rect(d.bbox), std::move(map)};
  } else if (j.contains("embedding_file") && !j["embedding_file"].is_null()) {
    if (!allow_files) throw IoError("embedding_file references are not accepted here");
    std::filesystem::path p = j["embedding_file"].get<std::string>();
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    d.dense_embedding = DenseEmbeddingCrop{embedding_rect(d.bbox), io::load_npy_embedding(p.string())};
  }
  d.validate();
  return d;
}

Json to_json(const RawDetection& d, const std::optional<std::string>& embedding_file) {
  Json j = {{"source", to_string(d.source)}, {"bbox", box_json(d.bbox)}, {"confidence", d.confidence}};
  if (d.segmentation) j["mask"] = rle_encode(*d.segmentation);
  if (embedding_file) {
    j["embedding_file"] = *embedding_file;
  } else if (d.dense_embedding) {
    const EmbeddingMap& m = d.dense_embedding->map;
    j["embedding"] = {{"shape", {m.channels(), m.height(), m.width()}},
                      {"data", std::vector<float>(m.values().begin(), m.values().end())}};
  }
  return j;
}

Json to_json(const FusedDetection& d) {
  return {{"category", to_string(d.category)},
          {"bbox", box_json(d.bbox)},
          {"confidence", d.confidence},
          {"coverage", d.coverage()},
          {"contributors", d.contributors},
          {"track_id", d.track_id},
          {"has_dense_embedding", d.dense_embedding.has_value()},
          {"region", rle_encode(d.region)}};
}

FusedDetection fused_from_json(const Json& j, int frame_height, int frame_width) {
  FusedDetection d;
  d.category = category_from_string(j.at("category").get<std::string>());
  d.bbox = box_from(j.at("bbox"));
  d.confidence = j.value("confidence", 1.f);
  d.region = j.contains("region") ? rle_decode(j["region"]) : BinaryMask::from_box(frame_height, frame_width, d.bbox);
  if (j.contains("contributors")) d.contributors = j["contributors"].get<std::vector<int>>();
  d.track_id = j.value("track_id", -1);
  return d;
}

std::vector<RawDetection> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path);
  const std::string base = std::filesystem::path(path).parent_path().string();
  std::vector<RawDetection> out;
  const char first = static_cast<char>(in.peek());
  if (first == '[') {
    Json arr = Json::parse(in);
    for (const auto& j : arr) out.push_back(raw_from_json(j, base.empty() ? "." : base));
    return out;
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(raw_from_json(Json::parse(line), base.empty() ? "." : base));
  }
  return out;
}

AnnotationAdapter::AnnotationAdapter(std::string identity, std::vector<RawDetection> records,
                                     std::optional<DetectionSource> only)
    : DetectorAdapter(std::move(identity)) {
  for (auto& r : records)
    if (!only || r.source == *only) records_.push_back(std::move(r));
}

std::vector<RawDetection> AnnotationAdapter::detect(const ImageTensor& image) {
  for (const auto& r : records_)
    if (r.segmentation && (r.segmentation->height() != image.height() || r.segmentation->width() != image.width()))
      throw ShapeError("annotation mask does not match the image size");
  return records_;
}

}  // namespace realanon
