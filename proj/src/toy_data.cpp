#include "realanon/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "realanon/errors.hpp"

namespace realanon {

namespace {

constexpr int kParts = 6;  // head, torso, arms, legs
constexpr std::uint64_t kEmbeddingSeed = 0x5eedc5e;

struct Capsule {
  float ax, ay, bx, by, radius;
  int part;
};

using Color = std::array<float, 3>;

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

Color pick(Rng& rng, std::initializer_list<Color> palette) {
  const int i = rng.uniform_int(0, static_cast<int>(palette.size()) - 1);
  return *(palette.begin() + i);
}

/// Fixed per-part coefficient tables of the fake embedding.
struct EmbeddingTables {
  float a[kParts][EmbeddingMap::kDenseChannels];
  float b[kParts][EmbeddingMap::kDenseChannels];
  float c[kParts][EmbeddingMap::kDenseChannels];
  EmbeddingTables() {
    Rng rng(kEmbeddingSeed);
    for (int p = 0; p < kParts; ++p)
      for (int k = 0; k < EmbeddingMap::kDenseChannels; ++k) {
        a[p][k] = static_cast<float>(rng.normal());
        b[p][k] = static_cast<float>(rng.normal());
        c[p][k] = static_cast<float>(0.5 * rng.normal());
      }
  }
};

const EmbeddingTables& tables() {
  static const EmbeddingTables t;
  return t;
}

void draw_background(ImageTensor& img, Rng& rng) {
  const Color c0 = random_color(rng), c1 = random_color(rng);
  const double angle = rng.uniform() * 2 * std::numbers::pi;
  const double f1 = 0.1 + 0.4 * rng.uniform(), f2 = 0.1 + 0.4 * rng.uniform();
  const double p1 = rng.uniform() * 6.28, p2 = rng.uniform() * 6.28;
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double diag = std::hypot(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double t = 0.5 + (dx * (x - img.width() / 2.0) + dy * (y - img.height() / 2.0)) / diag;
      const double tex = 0.06 * std::sin(f1 * x + p1) + 0.06 * std::sin(f2 * y + p2);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - t) * c0[c] + t * c1[c] + tex + 0.02 * (rng.uniform() - 0.5);
        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
}

}  // namespace

FigureStyle random_style(Rng& rng) {
  FigureStyle s;
  s.shirt = random_color(rng);
  s.stripe = random_color(rng);
  s.pants = pick(rng, {{0.15f, 0.18f, 0.35f}, {0.1f, 0.1f, 0.1f}, {0.45f, 0.35f, 0.25f}, {0.6f, 0.6f, 0.62f},
                       {0.25f, 0.3f, 0.2f}, {0.7f, 0.15f, 0.15f}});
  s.skin = pick(rng, {{0.96f, 0.8f, 0.69f}, {0.87f, 0.67f, 0.5f}, {0.6f, 0.42f, 0.3f}, {0.36f, 0.24f, 0.17f}});
  s.hair = pick(rng, {{0.08f, 0.06f, 0.05f}, {0.35f, 0.2f, 0.1f}, {0.85f, 0.7f, 0.4f}, {0.5f, 0.5f, 0.5f}});
  s.stripe_period = rng.uniform() < 0.25 ? 0.f : static_cast<float>(rng.uniform_int(3, 9));
  s.stripe_angle = static_cast<float>(rng.uniform() * std::numbers::pi);
  return s;
}

FigurePose random_pose(Rng& rng) {
  FigurePose p;
  p.center_x = static_cast<float>(0.42 + 0.16 * rng.uniform());
  p.top = static_cast<float>(0.04 + 0.08 * rng.uniform());
  p.scale = static_cast<float>(0.72 + 0.2 * rng.uniform());
  p.arm_left = static_cast<float>(0.08 + 0.6 * rng.uniform());
  p.arm_right = static_cast<float>(0.08 + 0.6 * rng.uniform());
  p.leg_left = static_cast<float>(0.02 + 0.25 * rng.uniform());
  p.leg_right = static_cast<float>(0.02 + 0.25 * rng.uniform());
  return p;
}

ToyFigure render_figure(int height, int width, const FigureStyle& style, const FigurePose& pose, Rng& background) {
  if (height <= 0 || width <= 0) throw ShapeError("render_figure: empty frame");
  ToyFigure fig;
  fig.image = ImageTensor(height, width);
  fig.region = BinaryMask(height, width);
  fig.embedding = EmbeddingMap(EmbeddingMap::kDenseChannels, height, width);
  draw_background(fig.image, background);

  // Skeleton in units of figure height, origin at the top of the head.
  const float u = pose.scale * height;
  const float ox = pose.center_x * width, oy = pose.top * height;
  auto px = [&](float x) { return ox + x * u; };
  auto py = [&](float y) { return oy + y * u; };
  const float arm_len = 0.32f, leg_len = 0.46f;
  const std::vector<Capsule> capsules = {
      {px(-0.055f), py(0.52f), px(-0.055f - leg_len * std::sin(pose.leg_left)),
       py(0.52f + leg_len * std::cos(pose.leg_left)), 0.048f * u, 4},
      {px(0.055f), py(0.52f), px(0.055f + leg_len * std::sin(pose.leg_right)),
       py(0.52f + leg_len * std::cos(pose.leg_right)), 0.048f * u, 5},
      {px(0.f), py(0.22f), px(0.f), py(0.48f), 0.1f * u, 1},
      {px(-0.1f), py(0.21f), px(-0.1f - arm_len * std::sin(pose.arm_left)),
       py(0.21f + arm_len * std::cos(pose.arm_left)), 0.036f * u, 2},
      {px(0.1f), py(0.21f), px(0.1f + arm_len * std::sin(pose.arm_right)),
       py(0.21f + arm_len * std::cos(pose.arm_right)), 0.036f * u, 3},
      {px(0.f), py(0.085f), px(0.f), py(0.085f), 0.075f * u, 0},
  };
  const auto& tab = tables();
  const float ca = std::cos(style.stripe_angle), sa = std::sin(style.stripe_angle);
  for (const Capsule& cap : capsules) {
    const float vx = cap.bx - cap.ax, vy = cap.by - cap.ay;
    const float len2 = vx * vx + vy * vy;
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(cap.ay, cap.by) - cap.radius)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(cap.ay, cap.by) + cap.radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(cap.ax, cap.bx) - cap.radius)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(cap.ax, cap.bx) + cap.radius)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const float qx = x + 0.5f - cap.ax, qy = y + 0.5f - cap.ay;
        const float t = len2 > 0 ? std::clamp((qx * vx + qy * vy) / len2, 0.f, 1.f) : 0.5f;
        const float dx = qx - t * vx, dy = qy - t * vy;
        const float d = std::sqrt(dx * dx + dy * dy);
        if (d > cap.radius) continue;
        // Signed perpendicular coordinate in [-1, 1].
        float s = d / cap.radius;
        if (len2 > 0 ? (vx * qy - vy * qx) < 0 : qx < 0) s = -s;
        const float along = len2 > 0 ? t : 0.5f + 0.5f * qy / cap.radius;

        Color base;
        if (cap.part == 0) {
          base = qy < -0.25f * cap.radius ? style.hair : style.skin;
        } else if (cap.part == 4 || cap.part == 5) {
          base = style.pants;
        } else if (cap.part != 1 && t > 0.85f) {
          base = style.skin;  // hands
        } else {
          base = style.shirt;
          if (style.stripe_period > 0) {
            const float proj = (x * ca + y * sa) / style.stripe_period;
            if (static_cast<long>(std::floor(proj)) % 2 == 0) base = style.stripe;
          }
        }
        const float shade = 0.72f + 0.28f * std::cos(s * 1.3f);
        for (int c = 0; c < 3; ++c) fig.image.at(y, x, c) = std::clamp(base[c] * shade, 0.f, 1.f);
        fig.region.set(y, x, true);
        for (int k = 0; k < EmbeddingMap::kDenseChannels; ++k)
          fig.embedding.at(k, y, x) =
              std::tanh(tab.a[cap.part][k] + tab.b[cap.part][k] * along + tab.c[cap.part][k] * s);
      }
  }
  fig.bbox = fig.region.bounds();
  return fig;
}

ToyFigure make_toy_figure(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  const FigureStyle style = random_style(rng);
  const FigurePose pose = random_pose(rng);
  return render_figure(height, width, style, pose, rng);
}

ToyFigure ToyFigureDataset::operator[](std::size_t i) const {
  if (i >= size_) throw ShapeError("toy dataset index out of range");
  return make_toy_figure(height_, width_, mix_seed(seed_, i));
}

std::vector<ToyReidImage> make_reid_set(int identities, int views, int height, int width, std::uint64_t seed) {
  if (identities < 1 || views < 1) throw ConfigError("make_reid_set: need identities and views");
  std::vector<ToyReidImage> out;
  out.reserve(static_cast<std::size_t>(identities) * views);
  for (int id = 0; id < identities; ++id) {
    Rng style_rng(mix_seed(seed, static_cast<std::uint64_t>(id)));
    const FigureStyle style = random_style(style_rng);
    for (int v = 0; v < views; ++v) {
      Rng view_rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(id)), 1000 + static_cast<std::uint64_t>(v)));
      const FigurePose pose = random_pose(view_rng);
      out.push_back({render_figure(height, width, style, pose, view_rng), id, v});
    }
  }
  return out;
}

}  // namespace realanon
