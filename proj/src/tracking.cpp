#include "realanon/tracking.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <tuple>

#include "realanon/errors.hpp"
#include "realanon/geometry.hpp"

namespace realanon {

namespace {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8, Eigen::RowMajor>;
using Mat4 = Eigen::Matrix<double, 4, 4>;
using Mat48 = Eigen::Matrix<double, 4, 8>;

Vec8 state_of(const Track& t) { return Eigen::Map<const Vec8>(t.state.data()); }
Mat8 cov_of(const Track& t) { return Eigen::Map<const Mat8>(t.covariance.data()); }

void store(Track& t, const Vec8& x, const Mat8& p) {
  Eigen::Map<Vec8>(t.state.data()) = x;
  const Mat8 sym = 0.5 * (p + p.transpose());
  Eigen::Map<Mat8>(t.covariance.data()) = sym;
}

Eigen::Vector4d measure(const Box& b) { return {b.center_x(), b.center_y(), b.width(), b.height()}; }

}  // namespace

Box Track::box() const {
  const double cx = state[0], cy = state[1], w = state[2], h = state[3];
  return {static_cast<float>(cx - w / 2), static_cast<float>(cy - h / 2), static_cast<float>(cx + w / 2),
          static_cast<float>(cy + h / 2)};
}

double Track::covariance_trace() const {
  double t = 0;
  for (int i = 0; i < 8; ++i) t += covariance[i * 9];
  return t;
}

Track Track::from_box(int id, const Box& box, LatentCode latent, const KalmanOptions& o) {
  if (!box.valid()) throw DegenerateGeometryError("cannot start a track from an empty box");
  Track t;
  t.track_id = id;
  t.latent = std::move(latent);
  Vec8 x = Vec8::Zero();
  x.head<4>() = measure(box);
  Mat8 p = Mat8::Zero();
  for (int i = 0; i < 4; ++i) {
    p(i, i) = o.observation_noise;
    p(i + 4, i + 4) = o.initial_velocity_variance;
  }
  store(t, x, p);
  t.age = 1;
  return t;
}

Track predict(const Track& track, int dt, const KalmanOptions& o) {
  if (dt < 1) throw ConfigError("predict: dt must be at least one frame");
  Mat8 f = Mat8::Identity();
  for (int i = 0; i < 4; ++i) f(i, i + 4) = dt;
  Mat8 q = Mat8::Zero();
  for (int i = 0; i < 4; ++i) {
    q(i, i) = o.position_noise * dt;
    q(i + 4, i + 4) = o.velocity_noise * dt;
  }
  Track out = track;
  Vec8 x = f * state_of(track);
  x[2] = std::max(x[2], 1e-6);
  x[3] = std::max(x[3], 1e-6);
  store(out, x, f * cov_of(track) * f.transpose() + q);
  return out;
}

Track update(const Track& track, const Box& measurement, const KalmanOptions& o) {
  if (!measurement.valid()) throw DegenerateGeometryError("update: empty measurement box");
  const Mat8 p = cov_of(track);
  if (Eigen::LLT<Mat8>(p).info() != Eigen::Success)
    throw NumericalError("track " + std::to_string(track.track_id) + ": covariance is not positive definite");
  Mat48 h = Mat48::Zero();
  for (int i = 0; i < 4; ++i) h(i, i) = 1;
  const Mat4 r = Mat4::Identity() * o.observation_noise;
  const Mat4 s = h * p * h.transpose() + r;
  const Eigen::LLT<Mat4> llt(s);
  if (llt.info() != Eigen::Success)
    throw NumericalError("track " + std::to_string(track.track_id) + ": innovation covariance is singular");
  const Eigen::Matrix<double, 8, 4> k = llt.solve(h * p).transpose();
  const Vec8 x = state_of(track) + k * (measure(measurement) - h * state_of(track));
  const Mat8 a = Mat8::Identity() - k * h;
  // Joseph form keeps the posterior symmetric positive definite.
  const Mat8 post = a * p * a.transpose() + k * r * k.transpose();
  Track out = track;
  Vec8 xc = x;
  xc[2] = std::max(xc[2], 1e-6);
  xc[3] = std::max(xc[3], 1e-6);
  store(out, xc, post);
  return out;
}

Track update(const Track& track, const FusedDetection& detection, const KalmanOptions& o) {
  return update(track, detection.bbox, o);
}

Association associate(const std::vector<Track>& tracks, const std::vector<FusedDetection>& detections,
                      double iou_gate) {
  if (!(iou_gate > 0 && iou_gate < 1)) throw ConfigError("iou_gate must lie in (0, 1)");
  std::vector<std::tuple<double, int, int>> pairs;
  for (int t = 0; t < static_cast<int>(tracks.size()); ++t) {
    const Box tb = tracks[t].box();
    for (int d = 0; d < static_cast<int>(detections.size()); ++d) {
      const Box& db = detections[d].bbox;
      if (!tb.valid() || !db.valid()) continue;
      const double v = iou(tb, db);
      if (v > iou_gate) pairs.emplace_back(v, t, d);
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  std::vector<bool> track_used(tracks.size()), det_used(detections.size());
  Association out;
  for (const auto& [v, t, d] : pairs) {
    if (track_used[t] || det_used[d]) continue;
    track_used[t] = det_used[d] = true;
    out.matches.emplace_back(t, d);
  }
  for (int t = 0; t < static_cast<int>(tracks.size()); ++t)
    if (!track_used[t]) out.unmatched_tracks.push_back(t);
  for (int d = 0; d < static_cast<int>(detections.size()); ++d)
    if (!det_used[d]) out.unmatched_detections.push_back(d);
  return out;
}

Tracker::Tracker(TrackerOptions options) : options_(options) {
  if (!(options_.iou_gate > 0 && options_.iou_gate < 1)) throw ConfigError("iou_gate must lie in (0, 1)");
  if (options_.max_misses < 0) throw ConfigError("max_misses must be non-negative");
  if (options_.z_dim <= 0) throw ConfigError("z_dim must be positive");
}

std::vector<TrackedDetection> Tracker::feed(int frame_index, std::vector<FusedDetection> detections) {
  if (started_ && frame_index <= last_frame_) throw ConfigError("tracker frames must be strictly increasing");
  if (started_)
    for (auto& t : tracks_) t = predict(t, frame_index - last_frame_, options_.kalman);
  started_ = true;
  last_frame_ = frame_index;

  const Association a = associate(tracks_, detections, options_.iou_gate);
  std::vector<int> det_track(detections.size(), -1);
  for (const auto& [t, d] : a.matches) {
    tracks_[t] = update(tracks_[t], detections[d], options_.kalman);
    tracks_[t].misses = 0;
    ++tracks_[t].age;
    det_track[d] = t;
  }
  for (int t : a.unmatched_tracks) ++tracks_[t].misses;
  for (int d : a.unmatched_detections) {
    if (!detections[d].bbox.valid()) continue;
    const int id = next_id_++;
    tracks_.push_back(Track::from_box(id, detections[d].bbox,
                                      LatentCode::sample(options_.z_dim, mix_seed(options_.seed, static_cast<std::uint64_t>(id))),
                                      options_.kalman));
    det_track[d] = static_cast<int>(tracks_.size()) - 1;
  }

  std::vector<TrackedDetection> out;
  out.reserve(detections.size());
  for (std::size_t d = 0; d < detections.size(); ++d) {
    TrackedDetection td;
    if (det_track[d] >= 0) {
      const Track& t = tracks_[det_track[d]];
      td.track_id = t.track_id;
      td.latent = t.latent;
    }
    td.detection = std::move(detections[d]);
    td.detection.track_id = td.track_id;
    out.push_back(std::move(td));
  }
  std::erase_if(tracks_, [&](const Track& t) { return t.misses > options_.max_misses; });
  return out;
}

}  // namespace realanon
