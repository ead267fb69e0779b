#include "realanon/anonymizer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "realanon/checkpoint.hpp"

namespace realanon {

const char* to_string(GeneratorId id) {
  switch (id) {
    case GeneratorId::BodyDense: return "body_cse";
    case GeneratorId::BodyPlain: return "body_plain";
    case GeneratorId::Face: return "face";
  }
  return "?";
}

GeneratorId generator_for(Category c) {
  switch (c) {
    case Category::PersonWithDense: return GeneratorId::BodyDense;
    case Category::PersonPlain: return GeneratorId::BodyPlain;
    case Category::FaceOnly: return GeneratorId::Face;
  }
  throw ConfigError("unknown category");
}

namespace {

PixelRect centered_rect(double cx, double cy, double w, double h) {
  const int iw = std::max(1, static_cast<int>(std::lround(w)));
  const int ih = std::max(1, static_cast<int>(std::lround(h)));
  return {static_cast<int>(std::lround(cx - iw / 2.0)), static_cast<int>(std::lround(cy - ih / 2.0)), iw, ih};
}

}  // namespace

CropTransform body_crop(const Box& bbox, int target_height, int target_width, double margin) {
  if (!bbox.valid()) throw DegenerateGeometryError("body_crop: empty box");
  const double aspect = static_cast<double>(target_height) / target_width;
  double h = bbox.height() * (1 + margin), w = bbox.width() * (1 + margin);
  if (h / w < aspect) h = w * aspect;
  else w = h / aspect;
  return {centered_rect(bbox.center_x(), bbox.center_y(), w, h), target_height, target_width};
}

CropTransform face_crop(const Box& bbox, int target_size, double expansion) {
  if (!bbox.valid()) throw DegenerateGeometryError("face_crop: empty box");
  const double side = expansion * std::max(bbox.width(), bbox.height());
  return {centered_rect(bbox.center_x(), bbox.center_y(), side, side), target_size, target_size};
}

AnonymizationPlan plan(const std::vector<FusedDetection>& detections, const std::vector<LatentCode>& latents,
                       bool ascending) {
  if (latents.size() != detections.size()) throw ConfigError("plan: one latent per detection required");
  std::vector<int> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> cov(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) cov[i] = detections[i].coverage();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return ascending ? cov[a] < cov[b] : cov[a] > cov[b]; });
  AnonymizationPlan p;
  for (int i : order) p.entries.push_back({i, generator_for(detections[i].category), cov[i], latents[i]});
  return p;
}

void GanSynthesizer::set_generator(GeneratorId id, std::shared_ptr<Generator<float>> g) {
  if (!g) throw ConfigError("null generator");
  const bool dense = g->config().condition == Conditioning::DenseEmbedding;
  if (dense != (id == GeneratorId::BodyDense))
    throw ConfigError(std::string("generator conditioning does not suit slot ") + to_string(id));
  slots_[id].generator = std::move(g);
}

std::shared_ptr<GanSynthesizer> GanSynthesizer::load_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir);
  auto synth = std::make_shared<GanSynthesizer>();
  for (GeneratorId id : {GeneratorId::BodyDense, GeneratorId::BodyPlain, GeneratorId::Face}) {
    const fs::path base = fs::path(dir) / to_string(id);
    const fs::path ckpt = base.string() + ".ckpt";
    if (!fs::exists(ckpt)) continue;
    synth->set_generator(id, std::make_shared<Generator<float>>(load_generator(ckpt.string())));
    const fs::path centers = base.string() + ".centers.json";
    if (fs::exists(centers)) synth->set_centers(id, load_centers(centers.string()));
    const fs::path directions = base.string() + ".directions.json";
    if (fs::exists(directions))
      for (auto& d : load_directions(directions.string())) synth->add_direction(id, std::move(d));
  }
  return synth;
}

void GanSynthesizer::set_centers(GeneratorId id, TruncationCenters centers) { slots_[id].centers = std::move(centers); }

void GanSynthesizer::add_direction(GeneratorId id, EditDirection d) {
  std::string name = d.name;
  slots_[id].directions[name] = std::move(d);
}

std::vector<std::string> GanSynthesizer::directions(GeneratorId id) const {
  std::vector<std::string> out;
  if (auto it = slots_.find(id); it != slots_.end())
    for (const auto& [name, d] : it->second.directions) out.push_back(name);
  return out;
}

const GanSynthesizer::Slot& GanSynthesizer::slot(GeneratorId id) const {
  auto it = slots_.find(id);
  if (it == slots_.end() || !it->second.generator)
    throw ConfigError(std::string("no generator loaded for ") + to_string(id));
  return it->second;
}

bool GanSynthesizer::available(GeneratorId id) const {
  auto it = slots_.find(id);
  return it != slots_.end() && it->second.generator != nullptr;
}

int GanSynthesizer::height(GeneratorId id) const { return slot(id).generator->config().height; }
int GanSynthesizer::width(GeneratorId id) const { return slot(id).generator->config().width; }
int GanSynthesizer::z_dim(GeneratorId id) const { return slot(id).generator->config().z_dim; }

ImageTensor GanSynthesizer::generate(GeneratorId id, const ImageTensor& crop, const BinaryMask& keep,
                                     const EmbeddingMap* condition, const LatentCode& z, const StyleEdit& edit) {
  const Slot& s = slot(id);
  StyleVector w = map_latent(*s.generator, z);
  if (edit.psi != 1.0) {
    if (!s.centers) throw ConfigError(std::string("truncation requested but no centers for ") + to_string(id));
    w = truncate(w, *s.centers, edit.psi);
  }
  for (const auto& [name, strength] : edit.directions) {
    auto it = s.directions.find(name);
    if (it == s.directions.end()) continue;  // direction belongs to another generator
    w = apply_direction(w, it->second, strength);
  }
  return synthesize_style(*s.generator, crop, keep, id == GeneratorId::BodyDense ? condition : nullptr, w);
}

StitchResult anonymize_image(const ImageTensor& image, const std::vector<FusedDetection>& detections,
                             const AnonymizationPlan& plan, Synthesizer& synth, const StitchOptions& options) {
  StitchResult res{image, std::vector<int>(static_cast<std::size_t>(image.height()) * image.width(), -1)};
  ImageTensor& canvas = res.image;
  int step = 0;
  for (const PlanEntry& e : plan.entries) {
    try {
      const FusedDetection& det = detections.at(static_cast<std::size_t>(e.detection));
      if (det.region.height() != image.height() || det.region.width() != image.width())
        throw ShapeError("detection region does not match the frame");
      const BinaryMask region = options.mask_dilation > 0 ? det.region.dilated(options.mask_dilation) : det.region;
      if (!region.any()) {
        ++step;
        continue;
      }
      const int th = synth.height(e.generator), tw = synth.width(e.generator);
      const Box box = det.bbox.valid() ? det.bbox : region.bounds();
      const CropTransform t = e.generator == GeneratorId::Face ? face_crop(box, th, options.face_expansion)
                                                               : body_crop(box, th, tw, options.body_margin);
      if (t.target_height != th || t.target_width != tw) throw ShapeError("face generator must be square");
      const ImageTensor crop = resize_bilinear(crop_reflect(canvas, t.source), th, tw);
      const BinaryMask keep = resize_nearest(crop_zero(region, t.source), th, tw).inverted();
      std::optional<EmbeddingMap> cond;
      if (e.generator == GeneratorId::BodyDense) {
        if (!det.dense_embedding) throw ConfigError("dense-conditioned detection lacks an embedding");
        cond = project_embedding(det.dense_embedding->map, det.dense_embedding->where, t.source, th, tw);
      }
      const ImageTensor out = synth.generate(e.generator, crop, keep, cond ? &*cond : nullptr, e.latent, options.edit);
      if (out.height() != th || out.width() != tw) throw ShapeError("synthesizer returned a wrongly sized crop");
      const ImageTensor back = resize_bilinear(out, t.source.height, t.source.width);
      const int y0 = std::max(0, t.source.y), y1 = std::min(image.height(), t.source.y + t.source.height);
      const int x0 = std::max(0, t.source.x), x1 = std::min(image.width(), t.source.x + t.source.width);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          if (!region.at(y, x)) continue;
          const float* src = back.pixel(y - t.source.y, x - t.source.x);
          float* dst = canvas.pixel(y, x);
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
          res.owner[static_cast<std::size_t>(y) * image.width() + x] = e.detection;
        }
      // Region pixels outside the crop rectangle cannot occur: the crop contains the box.
    } catch (const StitchError&) {
      throw;
    } catch (const std::exception& ex) {
      throw StitchError(step, e.detection, ex.what());
    }
    ++step;
  }
  return res;
}

ImageTensor pixelate(const ImageTensor& image, const BinaryMask& region, int grid) {
  if (grid < 1) throw ConfigError("pixelate: grid must be at least 1");
  if (region.height() != image.height() || region.width() != image.width())
    throw ShapeError("pixelate: region does not match the image");
  ImageTensor out = image;
  const Box b = region.bounds();
  if (!b.valid()) return out;
  const int bx = static_cast<int>(b.x0), by = static_cast<int>(b.y0);
  const int bw = static_cast<int>(b.x1) - bx, bh = static_cast<int>(b.y1) - by;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      const int cy0 = by + gy * bh / grid, cy1 = by + (gy + 1) * bh / grid;
      const int cx0 = bx + gx * bw / grid, cx1 = bx + (gx + 1) * bw / grid;
      double sum[3] = {0, 0, 0};
      long n = 0;
      for (int y = cy0; y < cy1; ++y)
        for (int x = cx0; x < cx1; ++x)
          if (region.at(y, x)) {
            for (int c = 0; c < 3; ++c) sum[c] += image.at(y, x, c);
            ++n;
          }
      if (n == 0) continue;
      for (int y = cy0; y < cy1; ++y)
        for (int x = cx0; x < cx1; ++x)
          if (region.at(y, x))
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(sum[c] / static_cast<double>(n));
    }
  return out;
}

ImageTensor mask_out(const ImageTensor& image, const BinaryMask& region, float fill) {
  if (region.height() != image.height() || region.width() != image.width())
    throw ShapeError("mask_out: region does not match the image");
  ImageTensor out = image;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      if (region.at(y, x))
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = fill;
  return out;
}

Mode mode_from_string(const std::string& s) {
  if (s == "gan") return Mode::Gan;
  if (s == "pixelate8") return Mode::Pixelate8;
  if (s == "pixelate16") return Mode::Pixelate16;
  if (s == "maskout") return Mode::MaskOut;
  throw ConfigError("unknown mode: " + s);
}

const char* to_string(Mode m) {
  switch (m) {
    case Mode::Gan: return "gan";
    case Mode::Pixelate8: return "pixelate8";
    case Mode::Pixelate16: return "pixelate16";
    case Mode::MaskOut: return "maskout";
  }
  return "?";
}

Json plan_audit(const AnonymizationPlan& plan, const std::vector<FusedDetection>& detections) {
  Json entries = Json::array();
  int order = 0;
  for (const auto& e : plan.entries) {
    const auto& d = detections.at(static_cast<std::size_t>(e.detection));
    entries.push_back({{"order", order++},
                       {"detection", e.detection},
                       {"category", to_string(d.category)},
                       {"generator", to_string(e.generator)},
                       {"coverage", e.coverage},
                       {"track_id", d.track_id},
                       {"bbox", {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1}}});
  }
  return entries;
}

LatentCode detection_latent(std::uint64_t seed, const FusedDetection& detection, int index, int z_dim) {
  if (detection.track_id >= 0) return LatentCode::sample(z_dim, mix_seed(seed, static_cast<std::uint64_t>(detection.track_id)));
  return LatentCode::sample(z_dim, mix_seed(seed ^ 0xa5a5a5a5a5a5a5a5ull, static_cast<std::uint64_t>(index)));
}

AnonymizeOutput anonymize_detections(const ImageTensor& image, std::vector<FusedDetection> detections, Mode mode,
                                     std::uint64_t seed, Synthesizer* synthesizer, const StitchOptions& options,
                                     const std::vector<LatentCode>* latents) {
  AnonymizeOutput out;
  std::vector<LatentCode> codes;
  if (latents) {
    codes = *latents;
  } else {
    for (std::size_t i = 0; i < detections.size(); ++i) {
      const GeneratorId g = generator_for(detections[i].category);
      const int zd = mode == Mode::Gan && synthesizer && synthesizer->available(g) ? synthesizer->z_dim(g) : 0;
      codes.push_back(zd > 0 ? detection_latent(seed, detections[i], static_cast<int>(i), zd) : LatentCode{});
    }
  }
  out.plan = plan(detections, codes);
  if (mode == Mode::Gan) {
    if (!synthesizer) throw ConfigError("gan mode needs a synthesizer");
    StitchResult r = anonymize_image(image, detections, out.plan, *synthesizer, options);
    out.image = std::move(r.image);
    out.owner = std::move(r.owner);
  } else {
    out.image = image;
    out.owner.assign(static_cast<std::size_t>(image.height()) * image.width(), -1);
    for (const auto& e : out.plan.entries) {
      const FusedDetection& d = detections[e.detection];
      const BinaryMask region = options.mask_dilation > 0 ? d.region.dilated(options.mask_dilation) : d.region;
      if (mode == Mode::MaskOut) out.image = mask_out(out.image, region);
      else out.image = pixelate(out.image, region, mode == Mode::Pixelate8 ? 8 : 16);
      for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
          if (region.at(y, x)) out.owner[static_cast<std::size_t>(y) * image.width() + x] = e.detection;
    }
  }
  out.detections = std::move(detections);
  return out;
}

AnonymizeOutput anonymize(const ImageTensor& image, std::span<DetectorAdapter* const> adapters,
                          const SourceThresholds& thresholds, Mode mode, std::uint64_t seed, Synthesizer* synthesizer,
                          const StitchOptions& options) {
  EnsembleResult raw = detect_all(image, adapters, thresholds);
  AnonymizeOutput out = anonymize_detections(image, fuse(raw.detections, image.height(), image.width()), mode, seed,
                                             synthesizer, options);
  out.failures = std::move(raw.failures);
  return out;
}

}  // namespace realanon
