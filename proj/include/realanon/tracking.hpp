#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "realanon/detection.hpp"
#include "realanon/generator.hpp"

namespace realanon {

/// Noise scalars of the constant-velocity box filter.
struct KalmanOptions {
  double position_noise = 1.0;   // process noise per frame on (cx, cy, w, h)
  double velocity_noise = 0.1;   // process noise per frame on the velocities
  double observation_noise = 1.0;
  double initial_velocity_variance = 10.0;
};

/**
 * A tracked individual: state (cx, cy, w, h, vcx, vcy, vw, vh), its 8x8
 * covariance (row-major) and the latent bound at birth.
 */
struct Track {
  int track_id = -1;
  std::array<double, 8> state{};
  std::array<double, 64> covariance{};
  int age = 0;
  int misses = 0;
  LatentCode latent;

  Box box() const;
  double covariance_trace() const;
  static Track from_box(int id, const Box& box, LatentCode latent, const KalmanOptions& options);
};

/// Constant-velocity time update over `dt` frames (dt >= 1).
Track predict(const Track& track, int dt, const KalmanOptions& options = {});
/// Measurement update with the box (cx, cy, w, h). Throws NumericalError
/// when the covariance is not positive definite.
Track update(const Track& track, const Box& measurement, const KalmanOptions& options = {});
Track update(const Track& track, const FusedDetection& detection, const KalmanOptions& options = {});

struct Association {
  std::vector<std::pair<int, int>> matches;  // (track index, detection index)
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;
};

/// Greedy one-to-one matching by descending box IoU; pairs need IoU > gate.
Association associate(const std::vector<Track>& tracks, const std::vector<FusedDetection>& detections,
                      double iou_gate);

struct TrackerOptions {
  double iou_gate = 0.3;
  int max_misses = 5;
  KalmanOptions kalman;
  std::uint64_t seed = 0;
  int z_dim = 512;
};

struct TrackedDetection {
  int track_id = -1;
  FusedDetection detection;
  LatentCode latent;
};

/**
 * Streaming tracker for one video. Track ids are never reused; the latent
 * of a track is derived from (seed, track id) and fixed for its lifetime.
 * Not thread-safe; use one instance per stream.
 */
class Tracker {
 public:
  explicit Tracker(TrackerOptions options = {});
  /// Frame indices must increase strictly.
  std::vector<TrackedDetection> feed(int frame_index, std::vector<FusedDetection> detections);
  const std::vector<Track>& tracks() const { return tracks_; }
  const TrackerOptions& options() const { return options_; }

 private:
  TrackerOptions options_;
  std::vector<Track> tracks_;
  int next_id_ = 0;
  int last_frame_ = 0;
  bool started_ = false;
};

}  // namespace realanon
