#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"
#include "realanon/annotations.hpp"
#include "realanon/io.hpp"
#include "realanon/service.hpp"

using namespace realanon;
using namespace realanon::testing;

namespace {

constexpr int kH = 64, kW = 48;

std::vector<std::uint8_t> png_bytes(std::uint64_t seed) {
  Rng rng(seed);
  return io::encode_png(random_image(kH, kW, rng));
}

RawDetection person(double cx, double cy) {
  RawDetection d;
  d.source = DetectionSource::InstanceSegmentation;
  d.segmentation = ellipse_mask(kH, kW, cx, cy, 8, 16);
  d.bbox = d.segmentation->bounds();
  d.confidence = 0.9f;
  return d;
}

/// Two overlapping people and a face in the background.
Json scene_annotations() {
  RawDetection face;
  face.source = DetectionSource::Face;
  face.bbox = Box{38, 52, 46, 60};
  face.confidence = 0.95f;
  return Json::array({to_json(person(14, 30)), to_json(person(24, 32)), to_json(face)});
}

std::shared_ptr<ColorSynthesizer> color_synth() { return std::make_shared<ColorSynthesizer>(); }

ImageTensor decode(const Json& body) { return io::decode_image(io::base64_decode(body["image"].get<std::string>())); }

std::string create(ServiceCore& core) {
  const auto bytes = png_bytes(1);
  const auto r = core.create_session(bytes, scene_annotations());
  REQUIRE(r.status == 201);
  return r.body["session_id"];
}

}  // namespace

TEST_CASE("session creation") {
  ServiceCore core({}, color_synth());
  const auto bytes = png_bytes(1);
  const auto a = core.create_session(bytes, scene_annotations());
  const auto b = core.create_session(bytes, scene_annotations());
  REQUIRE(a.status == 201);
  REQUIRE(b.status == 201);
  CHECK(a.body["session_id"] != b.body["session_id"]);
  CHECK(a.body["detections"] == b.body["detections"]);
  CHECK(a.body["detections"].size() == 3);
  CHECK(a.body["height"] == kH);
  CHECK(core.session_count() == 2);

  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  CHECK(core.create_session(junk, scene_annotations()).status == 422);
  CHECK(core.create_session(bytes, Json{{"not", "a list"}}).status == 422);
  CHECK(core.create_session(bytes).status == 422);  // nothing could detect anything

  ServiceConfig small;
  small.max_upload_bytes = 100;
  CHECK(ServiceCore(small, color_synth()).create_session(bytes, scene_annotations()).status == 413);
  ServiceConfig few_pixels;
  few_pixels.max_pixels = 100;
  CHECK(ServiceCore(few_pixels, color_synth()).create_session(bytes, scene_annotations()).status == 413);
}

TEST_CASE("rendering") {
  ServiceCore core({}, color_synth());
  const std::string id = create(core);
  const ImageTensor original = io::decode_image(png_bytes(1));

  const auto masked = core.anonymize(id, {{"mode", "maskout"}});
  REQUIRE(masked.status == 200);
  const ImageTensor m = decode(masked.body);
  const auto info = core.get_session(id);
  BinaryMask any(kH, kW);
  for (const auto& d : info.body["detections"]) any |= rle_decode(d["region"]);
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x)
      for (int c = 0; c < 3; ++c) CHECK(m.at(y, x, c) == (any.at(y, x) ? 0.f : original.at(y, x, c)));

  const auto g1 = core.anonymize(id, {{"mode", "gan"}, {"seed", 5}});
  const auto g2 = core.anonymize(id, {{"mode", "gan"}, {"seed", 5}});
  const auto g3 = core.anonymize(id, {{"mode", "gan"}, {"seed", 6}});
  CHECK(g1.body["image"] == g2.body["image"]);
  CHECK(g1.body["image"] != g3.body["image"]);
  const Json& audit = g1.body["audit"];
  REQUIRE(audit.size() == 3);
  for (std::size_t i = 1; i < audit.size(); ++i) CHECK(audit[i - 1]["coverage"] <= audit[i]["coverage"]);

  CHECK(core.anonymize(id, {{"mode", "blur"}}).status == 400);
  CHECK(core.anonymize(id, {{"psi", 2.0}}).status == 400);
  CHECK(core.anonymize(id, {{"psi", 0.5}}).status == 200);  // the stub ignores truncation
  CHECK(core.anonymize("nope", Json::object()).status == 404);
}

TEST_CASE("resampling one detection") {
  ServiceCore core({}, color_synth());
  const std::string id = create(core);
  const ImageTensor base = decode(core.anonymize(id, {{"seed", 3}}).body);

  const auto r1 = core.resample(id, 0, {{"seed", 11}});
  REQUIRE(r1.status == 200);
  CHECK(r1.body["detection"] == 0);
  CHECK(r1.body["generator"] == to_string(generator_for(category_from_string(
                                    core.get_session(id).body["detections"][0]["category"]))));
  const ImageTensor after = decode(r1.body);

  // Ownership in the final render: the audit lists stitch order, later entries win.
  const auto info = core.get_session(id).body;
  std::vector<int> owner(kH * kW, -1);
  for (const auto& e : r1.body["audit"]) {
    const BinaryMask region = rle_decode(info["detections"][e["detection"].get<int>()]["region"]);
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x)
        if (region.at(y, x)) owner[y * kW + x] = e["detection"];
  }
  int changed = 0;
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) {
      bool diff = false;
      for (int c = 0; c < 3; ++c) diff |= after.at(y, x, c) != base.at(y, x, c);
      if (owner[y * kW + x] != 0) CHECK_FALSE(diff);
      changed += diff;
    }
  CHECK(changed > 0);

  const ImageTensor other = decode(core.resample(id, 0, {{"seed", 12}}).body);
  CHECK_FALSE(other == after);
  CHECK(decode(core.resample(id, 0, {{"seed", 11}}).body) == after);

  CHECK(core.resample(id, 7, {{"seed", 1}}).status == 404);
  CHECK(core.resample(id, 0, {{"seed", -1}}).status == 400);
  CHECK(core.resample(id, 0, Json::object()).status == 400);
  CHECK(core.resample("nope", 0, {{"seed", 1}}).status == 404);
}

TEST_CASE("face detections route to the face generator") {
  auto synth = color_synth();
  ServiceCore core({}, synth);
  const std::string id = create(core);
  const auto dets = core.get_session(id).body["detections"];
  int face = -1;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i]["category"] == "face_only") face = static_cast<int>(i);
  REQUIRE(face >= 0);
  core.anonymize(id, Json::object());
  synth->calls.clear();
  const auto r = core.resample(id, face, {{"seed", 1}});
  CHECK(r.body["generator"] == "face");
  CHECK(std::count(synth->calls.begin(), synth->calls.end(), GeneratorId::Face) == 1);
}

TEST_CASE("session lifecycle") {
  ServiceConfig cfg;
  cfg.max_sessions = 2;
  ServiceCore core(cfg, color_synth());
  const std::string a = create(core), b = create(core), c = create(core);
  CHECK(core.session_count() == 2);
  CHECK(core.get_session(a).status == 404);  // least recently used was evicted
  CHECK(core.delete_session(b).status == 200);
  CHECK(core.delete_session(b).status == 404);
  CHECK(core.get_session(c).status == 200);
  CHECK(core.health().body["status"] == "ok");
  CHECK(core.health().body["generators"]["face"] == true);

  ServiceConfig short_lived;
  short_lived.session_ttl = std::chrono::seconds(0);
  ServiceCore ephemeral(short_lived, color_synth());
  create(ephemeral);
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  CHECK(ephemeral.evict_expired() == 1);
}

TEST_CASE("HTTP round trip") {
  ServiceConfig cfg;
  cfg.token = "secret";
  ServiceCore core(cfg, color_synth());
  httplib::Server server;
  register_routes(server, core);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto bytes = png_bytes(2);
  const Json upload = {{"image", io::base64_encode(bytes)}, {"annotations", scene_annotations()}};

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  auto denied = client.Post("/sessions", upload.dump(), "application/json");
  REQUIRE(denied);
  CHECK(denied->status == 401);

  client.set_bearer_token_auth("secret");
  auto created = client.Post("/sessions", upload.dump(), "application/json");
  REQUIRE(created);
  REQUIRE(created->status == 201);
  const std::string id = Json::parse(created->body)["session_id"];

  auto r1 = client.Post("/sessions/" + id + "/anonymize", R"({"mode": "gan", "seed": 9})", "application/json");
  auto r2 = client.Post("/sessions/" + id + "/anonymize", R"({"mode": "gan", "seed": 9})", "application/json");
  REQUIRE(r1);
  REQUIRE(r2);
  CHECK(r1->status == 200);
  CHECK(Json::parse(r1->body)["image"] == Json::parse(r2->body)["image"]);

  auto rs = client.Post("/sessions/" + id + "/detections/1/resample", R"({"seed": 4})", "application/json");
  REQUIRE(rs);
  CHECK(rs->status == 200);
  auto bad = client.Post("/sessions/" + id + "/anonymize", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  httplib::MultipartFormDataItems items = {
      {"image", std::string(bytes.begin(), bytes.end()), "frame.png", "image/png"},
      {"annotations", scene_annotations().dump(), "annotations.json", "application/json"}};
  auto multipart = client.Post("/sessions", items);
  REQUIRE(multipart);
  CHECK(multipart->status == 201);

  auto got = client.Get("/sessions/" + id);
  REQUIRE(got);
  CHECK(got->status == 200);
  CHECK(client.Get("/directions")->status == 200);
  CHECK(client.Delete("/sessions/" + id)->status == 200);
  CHECK(client.Get("/sessions/" + id)->status == 404);

  server.stop();
  thread.join();
}
