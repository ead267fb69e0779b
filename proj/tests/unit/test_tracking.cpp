#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "realanon/errors.hpp"
#include "realanon/tracking.hpp"

using namespace realanon;
using namespace realanon::testing;

namespace {

FusedDetection box_detection(const Box& b, int h = 200, int w = 300) {
  FusedDetection d;
  d.category = Category::PersonPlain;
  d.bbox = b;
  d.region = BinaryMask::from_box(h, w, b);
  return d;
}

Box centered(double cx, double cy, double w, double h) {
  return {static_cast<float>(cx - w / 2), static_cast<float>(cy - h / 2), static_cast<float>(cx + w / 2),
          static_cast<float>(cy + h / 2)};
}

}  // namespace

TEST_CASE("predict advances the state under constant velocity") {
  Track t = Track::from_box(0, centered(10, 10, 4, 4), {}, {});
  t.state = {10, 10, 4, 4, 1, 0, 0, 0};
  const Track p = predict(t, 1);
  CHECK(p.state[0] == doctest::Approx(11));
  CHECK(p.state[1] == doctest::Approx(10));

  t.state = {10, 10, 4, 4, 0, 0, 0, 0};
  const Track still = predict(t, 5);
  CHECK(still.state[0] == 10);
  CHECK(still.state[1] == 10);
  CHECK(still.covariance_trace() > t.covariance_trace());
  CHECK_THROWS_AS(predict(t, 0), ConfigError);
}

TEST_CASE("update with the predicted box leaves the state unchanged") {
  Track t = Track::from_box(0, centered(50, 40, 10, 20), {}, {});
  t.state[4] = 2;
  const Track p = predict(t, 1);
  const Track u = update(p, p.box());
  // Integer-valued state, so the float box reproduces the prediction exactly.
  for (int i = 0; i < 8; ++i) CHECK(std::abs(u.state[i] - p.state[i]) < 1e-9);
  CHECK(u.covariance_trace() <= p.covariance_trace());
}

TEST_CASE("repeated identical measurements converge to the measurement") {
  Track t = Track::from_box(0, centered(10, 10, 4, 4), {}, {});
  const Box target = centered(30, 25, 8, 12);
  for (int i = 0; i < 100; ++i) t = update(predict(t, 1), target);
  CHECK(t.state[0] == doctest::Approx(30).epsilon(1e-3));
  CHECK(t.state[1] == doctest::Approx(25).epsilon(1e-3));
  CHECK(t.state[2] == doctest::Approx(8).epsilon(1e-3));
  CHECK(t.state[3] == doctest::Approx(12).epsilon(1e-3));
}

TEST_CASE("posterior trace shrinks when the observation is precise") {
  KalmanOptions opts;
  opts.observation_noise = 1e-4;
  Track t = predict(Track::from_box(0, centered(10, 10, 4, 4), {}, opts), 3, opts);
  const Track u = update(t, centered(12, 10, 4, 4), opts);
  CHECK(u.covariance_trace() < t.covariance_trace());
}

TEST_CASE("update rejects a covariance that is not positive definite") {
  Track t = Track::from_box(0, centered(10, 10, 4, 4), {}, {});
  t.covariance.fill(0);
  t.covariance[0] = -1;
  CHECK_THROWS_AS(update(t, centered(10, 10, 4, 4)), NumericalError);
}

TEST_CASE("association by IoU gate") {
  std::vector<Track> tracks{Track::from_box(0, {0, 0, 10, 10}, {}, {})};
  auto a = associate(tracks, {box_detection({0, 0, 10, 9})}, 0.3);
  REQUIRE(a.matches.size() == 1);
  CHECK(a.matches[0] == std::pair{0, 0});

  // IoU 0.05 < 0.3: the detection is unmatched and the track misses.
  auto b = associate(tracks, {box_detection({9.5f, 0, 19.5f, 10})}, 0.3);
  CHECK(b.matches.empty());
  CHECK(b.unmatched_detections == std::vector<int>{0});
  CHECK(b.unmatched_tracks == std::vector<int>{0});
  CHECK_THROWS_AS(associate(tracks, {}, 1.0), ConfigError);
}

TEST_CASE("tracker births a new track below the gate and never reuses ids") {
  TrackerOptions opts;
  opts.max_misses = 1;
  opts.z_dim = 8;
  Tracker tracker(opts);
  auto f0 = tracker.feed(0, {box_detection({0, 0, 10, 10})});
  auto f1 = tracker.feed(1, {box_detection({100, 100, 110, 110})});
  REQUIRE(f0.size() == 1);
  REQUIRE(f1.size() == 1);
  CHECK(f1[0].track_id != f0[0].track_id);
  tracker.feed(2, {});
  tracker.feed(3, {});
  auto f4 = tracker.feed(4, {box_detection({0, 0, 10, 10})});
  REQUIRE(f4.size() == 1);
  CHECK(f4[0].track_id > f1[0].track_id);
  CHECK_THROWS_AS(tracker.feed(4, {}), ConfigError);
}

TEST_CASE("linear motion keeps one track with a constant latent") {
  TrackerOptions opts;
  opts.z_dim = 16;
  Tracker a(opts), b(opts);
  Rng rng(3);
  int id = -1;
  LatentCode first;
  for (int f = 0; f < 50; ++f) {
    const double jitter = rng.uniform() - 0.5;
    const Box box = centered(20 + 3 * f + jitter, 60 + 0.5 * f, 20, 40);
    const auto out = a.feed(f, {box_detection(box)});
    const auto out_b = b.feed(f, {box_detection(box)});
    REQUIRE(out.size() == 1);
    if (f == 0) {
      id = out[0].track_id;
      first = out[0].latent;
    }
    CHECK(out[0].track_id == id);
    CHECK(out[0].latent == first);
    CHECK(out[0].detection.track_id == id);
    CHECK(out_b[0].track_id == out[0].track_id);
  }
  CHECK(a.tracks().size() == 1);
}
