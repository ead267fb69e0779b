#include "realanon/service.hpp"

#include <algorithm>
#include <random>

#include "httplib.h"
#include "realanon/annotations.hpp"
#include "realanon/errors.hpp"
#include "realanon/io.hpp"

namespace realanon {

namespace {

ServiceResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 15]; }

std::string hex(std::uint64_t v) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = hex_digit(static_cast<unsigned>(v));
  return s;
}

/// Seeds are non-negative JSON integers (signed or unsigned storage).
bool read_seed(const Json& v, std::uint64_t& seed) {
  if (v.is_number_unsigned()) {
    seed = v.get<std::uint64_t>();
    return true;
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    seed = static_cast<std::uint64_t>(v.get<std::int64_t>());
    return true;
  }
  return false;
}

}  // namespace

LatentCode resample_latent(std::uint64_t seed, int index, int z_dim) {
  return LatentCode::sample(z_dim, mix_seed(mix_seed(seed, 0x7265736dull), static_cast<std::uint64_t>(index)));
}

ServiceCore::ServiceCore(ServiceConfig config, std::shared_ptr<Synthesizer> synthesizer,
                         std::vector<std::shared_ptr<DetectorAdapter>> adapters)
    : config_(std::move(config)), synthesizer_(std::move(synthesizer)), adapters_(std::move(adapters)) {
  std::random_device rd;
  salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::shared_ptr<ServiceCore::Session> ServiceCore::find(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  it->second->last_used = std::chrono::steady_clock::now();
  return it->second;
}

std::size_t ServiceCore::evict_expired() {
  std::lock_guard lock(sessions_mutex_);
  const auto now = std::chrono::steady_clock::now();
  return std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second->last_used > config_.session_ttl; });
}

std::size_t ServiceCore::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

ServiceResponse ServiceCore::create_session(std::span<const std::uint8_t> bytes, const Json& annotations) {
  if (bytes.size() > config_.max_upload_bytes) return error(413, "image exceeds the upload size limit");
  ImageTensor image;
  try {
    image = io::decode_image(bytes);
  } catch (const IoError& e) {
    return error(422, e.what());
  }
  if (static_cast<long>(image.height()) * image.width() > config_.max_pixels)
    return error(413, "image exceeds the pixel limit");

  std::vector<RawDetection> records;
  if (!annotations.is_null()) {
    if (!annotations.is_array()) return error(422, "annotations must be an array of detection records");
    try {
      for (const auto& j : annotations) records.push_back(raw_from_json(j, ".", false));
    } catch (const std::exception& e) {
      return error(422, std::string("invalid annotation record: ") + e.what());
    }
  }
  std::vector<DetectorAdapter*> adapters;
  for (const auto& a : adapters_) adapters.push_back(a.get());
  AnnotationAdapter upload("upload-annotations", std::move(records));
  if (!annotations.is_null()) adapters.push_back(&upload);
  if (adapters.empty()) return error(422, "no detectors configured and no annotations supplied");

  auto s = std::make_shared<Session>();
  EnsembleResult raw = detect_all(image, adapters, config_.thresholds);
  s->detections = fuse(raw.detections, image.height(), image.width());
  s->failures = std::move(raw.failures);
  s->image = std::move(image);
  s->last_used = std::chrono::steady_clock::now();

  evict_expired();
  {
    std::lock_guard lock(sessions_mutex_);
    while (sessions_.size() >= config_.max_sessions && !sessions_.empty()) {
      auto oldest = std::min_element(sessions_.begin(), sessions_.end(), [](const auto& a, const auto& b) {
        return a.second->last_used < b.second->last_used;
      });
      sessions_.erase(oldest);
    }
    s->id = "s" + hex(mix_seed(salt_, ++counter_));
    sessions_[s->id] = s;
  }

  Json dets = Json::array();
  for (std::size_t i = 0; i < s->detections.size(); ++i) {
    const auto& d = s->detections[i];
    dets.push_back({{"index", i},
                    {"category", to_string(d.category)},
                    {"generator", to_string(generator_for(d.category))},
                    {"bbox", {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1}},
                    {"coverage", d.coverage()},
                    {"confidence", d.confidence}});
  }
  Json failures = Json::array();
  for (const auto& f : s->failures) failures.push_back({{"adapter", f.adapter}, {"message", f.message}});
  return {201,
          {{"session_id", s->id},
           {"height", s->image.height()},
           {"width", s->image.width()},
           {"detections", dets},
           {"failures", failures}}};
}

AnonymizeOutput ServiceCore::render(Session& s, const RenderSettings& settings,
                                    const std::map<int, std::uint64_t>& overrides) {
  std::lock_guard lock(render_mutex_);
  std::vector<LatentCode> latents;
  for (std::size_t i = 0; i < s.detections.size(); ++i) {
    const GeneratorId g = generator_for(s.detections[i].category);
    const bool gan = settings.mode == Mode::Gan && synthesizer_ && synthesizer_->available(g);
    if (!gan) {
      latents.emplace_back();
      continue;
    }
    const int zd = synthesizer_->z_dim(g);
    const int idx = static_cast<int>(i);
    auto it = overrides.find(idx);
    latents.push_back(it != overrides.end() ? resample_latent(it->second, idx, zd)
                                            : detection_latent(settings.seed, s.detections[i], idx, zd));
  }
  StitchOptions opts = config_.stitch;
  opts.edit = settings.edit;
  return anonymize_detections(s.image, s.detections, settings.mode, settings.seed, synthesizer_.get(), opts, &latents);
}

Json ServiceCore::render_response(const Session& s, const AnonymizeOutput& out) const {
  const auto png = io::encode_png(s.last_render);
  return {{"session_id", s.id},
          {"mode", to_string(s.settings.mode)},
          {"seed", s.settings.seed},
          {"image", io::base64_encode(png)},
          {"audit", plan_audit(out.plan, s.detections)}};
}

namespace {

/// Parses mode/seed/psi/edits; throws ConfigError on malformed fields.
void parse_settings(const Json& body, Mode& mode, std::uint64_t& seed, StyleEdit& edit) {
  if (!body.is_null() && !body.is_object()) throw ConfigError("request body must be a JSON object");
  if (body.is_null()) return;
  try {
    if (body.contains("mode")) mode = mode_from_string(body.at("mode").get<std::string>());
    if (body.contains("seed") && !read_seed(body.at("seed"), seed))
      throw ConfigError("seed must be a non-negative integer");
    if (body.contains("psi")) edit.psi = body.at("psi").get<double>();
    if (!(edit.psi >= 0 && edit.psi <= 1)) throw ConfigError("psi must lie in [0, 1]");
    if (body.contains("edits"))
      for (const auto& e : body.at("edits"))
        edit.directions.emplace_back(e.at("name").get<std::string>(), e.value("strength", 0.0));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed request: ") + e.what());
  }
}

}  // namespace

ServiceResponse ServiceCore::anonymize(const std::string& id, const Json& body) {
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  std::lock_guard lock(s->mutex);
  RenderSettings settings;
  try {
    parse_settings(body, settings.mode, settings.seed, settings.edit);
  } catch (const ConfigError& e) {
    return error(400, e.what());
  }
  try {
    const AnonymizeOutput out = render(*s, settings, {});
    s->settings = settings;
    s->seed_overrides.clear();
    s->last_render = out.image;
    s->rendered = true;
    return {200, render_response(*s, out)};
  } catch (const ConfigError& e) {
    return error(409, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

ServiceResponse ServiceCore::resample(const std::string& id, int k, const Json& body) {
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  std::lock_guard lock(s->mutex);
  if (k < 0 || k >= static_cast<int>(s->detections.size())) return error(404, "unknown detection " + std::to_string(k));
  std::uint64_t seed = 0;
  if (!body.is_object() || !body.contains("seed") || !read_seed(body["seed"], seed))
    return error(400, "resample needs a non-negative integer seed");
  try {
    if (!s->rendered) {
      const AnonymizeOutput base = render(*s, s->settings, s->seed_overrides);
      s->last_render = base.image;
      s->rendered = true;
    }
    auto overrides = s->seed_overrides;
    overrides[k] = seed;
    const AnonymizeOutput full = render(*s, s->settings, overrides);
    // Only pixels owned by detection k are taken from the new render.
    ImageTensor next = s->last_render;
    for (int y = 0; y < next.height(); ++y)
      for (int x = 0; x < next.width(); ++x)
        if (full.owner[static_cast<std::size_t>(y) * next.width() + x] == k)
          for (int c = 0; c < 3; ++c) next.at(y, x, c) = full.image.at(y, x, c);
    s->seed_overrides = std::move(overrides);
    s->last_render = std::move(next);
    Json resp = render_response(*s, full);
    resp["detection"] = k;
    resp["generator"] = to_string(generator_for(s->detections[k].category));
    return {200, resp};
  } catch (const ConfigError& e) {
    return error(409, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

ServiceResponse ServiceCore::get_session(const std::string& id) {
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  std::lock_guard lock(s->mutex);
  Json dets = Json::array();
  for (const auto& d : s->detections) dets.push_back(to_json(d));
  return {200,
          {{"session_id", s->id},
           {"height", s->image.height()},
           {"width", s->image.width()},
           {"detections", dets},
           {"rendered", s->rendered},
           {"mode", to_string(s->settings.mode)},
           {"seed", s->settings.seed}}};
}

ServiceResponse ServiceCore::delete_session(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  if (sessions_.erase(id) == 0) return error(404, "unknown session " + id);
  return {200, {{"deleted", id}}};
}

ServiceResponse ServiceCore::directions() const {
  Json out = Json::object();
  if (auto* gan = dynamic_cast<const GanSynthesizer*>(synthesizer_.get()))
    for (GeneratorId g : {GeneratorId::BodyDense, GeneratorId::BodyPlain, GeneratorId::Face})
      out[to_string(g)] = gan->directions(g);
  return {200, {{"directions", out}}};
}

ServiceResponse ServiceCore::health() const {
  Json gens = Json::object();
  for (GeneratorId g : {GeneratorId::BodyDense, GeneratorId::BodyPlain, GeneratorId::Face})
    gens[to_string(g)] = synthesizer_ && synthesizer_->available(g);
  return {200, {{"status", "ok"}, {"sessions", session_count()}, {"generators", gens}}};
}

void register_routes(httplib::Server& server, ServiceCore& core) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse_body = [](const httplib::Request& req) -> Json {
    if (req.body.empty()) return Json();
    return Json::parse(req.body);  // throws on malformed input
  };

  server.set_payload_max_length(core.config().max_upload_bytes * 2 + (1u << 20));
  if (!core.config().token.empty()) {
    const std::string expected = "Bearer " + core.config().token;
    server.set_pre_routing_handler([expected](const httplib::Request& req, httplib::Response& res) {
      if (req.path == "/healthz" || req.get_header_value("Authorization") == expected)
        return httplib::Server::HandlerResponse::Unhandled;
      res.status = 401;
      res.set_content(R"({"error":"missing or invalid token"})", "application/json");
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  server.Post("/sessions", [&core, reply](const httplib::Request& req, httplib::Response& res) {
    std::vector<std::uint8_t> bytes;
    Json annotations;
    try {
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) return reply(res, error(422, "multipart upload lacks an 'image' part"));
        const auto& f = req.get_file_value("image").content;
        bytes.assign(f.begin(), f.end());
        if (req.has_file("annotations")) annotations = Json::parse(req.get_file_value("annotations").content);
      } else if (req.get_header_value("Content-Type").rfind("image/", 0) == 0) {
        bytes.assign(req.body.begin(), req.body.end());
      } else {
        const Json body = Json::parse(req.body);
        if (!body.is_object() || !body.contains("image") || !body["image"].is_string())
          return reply(res, error(422, "expected {\"image\": base64}"));
        const std::string& text = body["image"].get_ref<const std::string&>();
        if (text.size() / 4 * 3 > core.config().max_upload_bytes)
          return reply(res, error(413, "image exceeds the upload size limit"));
        bytes = io::base64_decode(text);
        if (body.contains("annotations")) annotations = body["annotations"];
      }
    } catch (const std::exception& e) {
      return reply(res, error(422, e.what()));
    }
    reply(res, core.create_session(bytes, annotations));
  });

  server.Post(R"(/sessions/([^/]+)/anonymize)", [&core, reply, parse_body](const httplib::Request& req,
                                                                           httplib::Response& res) {
    Json body;
    try {
      body = parse_body(req);
    } catch (const std::exception& e) {
      return reply(res, error(400, e.what()));
    }
    reply(res, core.anonymize(req.matches[1], body));
  });

  server.Post(R"(/sessions/([^/]+)/detections/(\d+)/resample)",
              [&core, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
                Json body;
                try {
                  body = parse_body(req);
                } catch (const std::exception& e) {
                  return reply(res, error(400, e.what()));
                }
                int k = -1;
                try {
                  k = std::stoi(req.matches[2]);
                } catch (const std::exception&) {
                  return reply(res, error(404, "unknown detection"));
                }
                reply(res, core.resample(req.matches[1], k, body));
              });

  server.Get(R"(/sessions/([^/]+))", [&core, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, core.get_session(req.matches[1]));
  });
  server.Delete(R"(/sessions/([^/]+))", [&core, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, core.delete_session(req.matches[1]));
  });
  server.Get("/directions", [&core, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, core.directions());
  });
  server.Get("/healthz", [&core, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, core.health());
  });
}

void run_server(ServiceCore& core, const std::string& host, int port) {
  httplib::Server server;
  register_routes(server, core);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace realanon
