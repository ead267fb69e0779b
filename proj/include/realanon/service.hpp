#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "realanon/anonymizer.hpp"
#include "realanon/detection.hpp"

namespace httplib {
class Server;
}

namespace realanon {

using Json = nlohmann::json;

struct ServiceConfig {
  std::size_t max_upload_bytes = 16u << 20;
  long max_pixels = 4096L * 4096L;
  std::chrono::seconds session_ttl{3600};
  std::size_t max_sessions = 64;
  std::string token;  // empty = no authentication
  SourceThresholds thresholds;
  StitchOptions stitch;
};

/// HTTP-independent result of a service call.
struct ServiceResponse {
  int status = 200;
  Json body;
};

/**
 * Session store and request handlers behind the HTTP routes.
 *
 * Sessions hold the uploaded image, its detections (computed once), the
 * last render settings and per-detection seed overrides. Requests on one
 * session are serialized; rendering is serialized globally because
 * generators cache activations.
 */
class ServiceCore {
 public:
  ServiceCore(ServiceConfig config, std::shared_ptr<Synthesizer> synthesizer,
              std::vector<std::shared_ptr<DetectorAdapter>> adapters = {});

  /// `annotations`: optional per-upload detector records (array), replayed
  /// by a stub adapter in addition to the configured adapters.
  ServiceResponse create_session(std::span<const std::uint8_t> image_bytes, const Json& annotations = Json());
  /// body: {mode?, seed?, psi?, edits?: [{name, strength}]}
  ServiceResponse anonymize(const std::string& session_id, const Json& body);
  /// body: {seed}
  ServiceResponse resample(const std::string& session_id, int detection, const Json& body);
  ServiceResponse get_session(const std::string& session_id);
  ServiceResponse delete_session(const std::string& session_id);
  ServiceResponse directions() const;
  ServiceResponse health() const;

  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t evict_expired();
  std::size_t session_count() const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct RenderSettings {
    Mode mode = Mode::Gan;
    std::uint64_t seed = 0;
    StyleEdit edit;
  };
  struct Session {
    std::string id;
    ImageTensor image;
    std::vector<FusedDetection> detections;
    std::vector<AdapterFailure> failures;
    std::map<int, std::uint64_t> seed_overrides;
    RenderSettings settings;
    bool rendered = false;
    ImageTensor last_render;
    std::chrono::steady_clock::time_point last_used;
    std::mutex mutex;
  };

  std::shared_ptr<Session> find(const std::string& id);
  AnonymizeOutput render(Session& s, const RenderSettings& settings, const std::map<int, std::uint64_t>& overrides);
  Json render_response(const Session& s, const AnonymizeOutput& out) const;

  ServiceConfig config_;
  std::shared_ptr<Synthesizer> synthesizer_;
  std::vector<std::shared_ptr<DetectorAdapter>> adapters_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex render_mutex_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

/// Latent for detection `index` when its seed was overridden by a resample.
LatentCode resample_latent(std::uint64_t seed, int index, int z_dim);

/// Installs the REST routes on `server`.
void register_routes(httplib::Server& server, ServiceCore& core);

/// Blocks serving on host:port.
void run_server(ServiceCore& core, const std::string& host, int port);

}  // namespace realanon
