#include "deco/rng.hpp"
#include "deco/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace deco {
namespace {

struct Texture {
  std::array<float, 3> base, amp_u, amp_v;
  float freq_u, freq_v, angle;
};

struct MovingShape {
  bool disk;
  float cx, cy, rx, ry;
  Texture tex;
  std::array<int, 2> velocity{0, 0};  // per-frame sampling offset, translate regimes
  float zoom_rate = 0.f;              // k_t = 1 + zoom_rate * t, scale regime

  bool covers(float qx, float qy) const {
    const float dx = qx - cx, dy = qy - cy;
    if (disk) return dx * dx + dy * dy <= rx * rx;
    return std::abs(dx) <= rx && std::abs(dy) <= ry;
  }

  // Frame-0 position sampled by pixel (x, y) of frame t.
  std::array<float, 2> source(Index x, Index y, Index t) const {
    if (zoom_rate != 0.f) {
      const float k = 1.f + zoom_rate * static_cast<float>(t);
      return {cx + (static_cast<float>(x) - cx) / k, cy + (static_cast<float>(y) - cy) / k};
    }
    return {static_cast<float>(x + velocity[0] * t), static_cast<float>(y + velocity[1] * t)};
  }

  float shade(int c, float qx, float qy) const {
    const float u = (qx - cx) * std::cos(tex.angle) + (qy - cy) * std::sin(tex.angle);
    const float v = -(qx - cx) * std::sin(tex.angle) + (qy - cy) * std::cos(tex.angle);
    return tex.base[c] + tex.amp_u[c] * std::sin(tex.freq_u * u) + tex.amp_v[c] * std::sin(tex.freq_v * v);
  }
};

struct Background {
  std::array<float, 3> base, a1, a2;
  float fx1, fy1, fx2, fy2, ph1, ph2;

  float shade(int c, float x, float y) const {
    return base[c] + a1[c] * std::sin(fx1 * x + fy1 * y + ph1) + a2[c] * std::sin(fx2 * x - fy2 * y + ph2);
  }
};

Texture random_texture(Rng& rng) {
  Texture t{};
  for (int c = 0; c < 3; ++c) {
    t.base[c] = static_cast<float>(rng.uniform(0.3, 0.7));
    t.amp_u[c] = static_cast<float>(rng.uniform(0.08, 0.15));
    t.amp_v[c] = static_cast<float>(rng.uniform(0.08, 0.15));
  }
  t.freq_u = static_cast<float>(rng.uniform(0.6, 1.4));
  t.freq_v = static_cast<float>(rng.uniform(0.6, 1.4));
  t.angle = static_cast<float>(rng.uniform(0.0, 3.14159));
  return t;
}

// Bilinear sample with border clamping, same arithmetic as the warp at scale 0.
float bilinear(const float* plane, Index H, Index W, float qx, float qy) {
  const float sx = std::clamp(qx, 0.f, static_cast<float>(W - 1));
  const float sy = std::clamp(qy, 0.f, static_cast<float>(H - 1));
  const auto x0 = static_cast<Index>(std::floor(sx)), y0 = static_cast<Index>(std::floor(sy));
  const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const float ax = sx - static_cast<float>(x0), ay = sy - static_cast<float>(y0);
  return (1.f - ay) * ((1.f - ax) * plane[y0 * W + x0] + ax * plane[y0 * W + x1]) +
         ay * ((1.f - ax) * plane[y1 * W + x0] + ax * plane[y1 * W + x1]);
}

std::array<int, 2> random_velocity(Rng& rng, Index frames, float max_disp) {
  const int vmax = frames > 1 ? static_cast<int>(std::floor(max_disp / static_cast<float>(frames - 1))) : 0;
  if (vmax < 1) return {0, 0};
  for (;;) {
    const int vx = static_cast<int>(rng.uniform_int(-vmax, vmax));
    const int vy = static_cast<int>(rng.uniform_int(-vmax, vmax));
    const float reach = std::hypot(static_cast<float>(vx), static_cast<float>(vy)) * static_cast<float>(frames - 1);
    if ((vx != 0 || vy != 0) && reach <= max_disp) return {vx, vy};
  }
}

}  // namespace

Regime parse_regime(std::string_view name) {
  if (name == "translate") return Regime::translate;
  if (name == "multi-object") return Regime::multi_object;
  if (name == "scale-change") return Regime::scale_change;
  throw ValidationError("unknown regime '" + std::string(name) + "' (expected translate, multi-object, scale-change)");
}

std::string_view regime_name(Regime regime) {
  switch (regime) {
    case Regime::translate: return "translate";
    case Regime::multi_object: return "multi-object";
    case Regime::scale_change: return "scale-change";
  }
  return "?";
}

SyntheticSample gen_synthetic(std::uint64_t seed, Index frames, Index height, Index width, Regime regime,
                              const SyntheticOptions& options) {
  if (height < 16 || width < 16) throw ValidationError("gen_synthetic: H and W must be >= 16");
  if (frames < 2) throw ValidationError("gen_synthetic: T must be >= 2");
  if (options.flow_per_frame && regime != Regime::translate)
    throw ValidationError("gen_synthetic: a forced flow is only meaningful for the translate regime");

  Rng rng(seed);
  const Index T = frames, H = height, W = width, plane = H * W;
  const float min_extent = static_cast<float>(std::min(H, W));
  const float max_disp = min_extent / 4.f;

  Background bg{};
  for (int c = 0; c < 3; ++c) {
    bg.base[c] = static_cast<float>(rng.uniform(0.35, 0.65));
    bg.a1[c] = static_cast<float>(rng.uniform(0.05, 0.12));
    bg.a2[c] = static_cast<float>(rng.uniform(0.05, 0.12));
  }
  bg.fx1 = static_cast<float>(rng.uniform(0.2, 0.7));
  bg.fy1 = static_cast<float>(rng.uniform(0.2, 0.7));
  bg.fx2 = static_cast<float>(rng.uniform(0.2, 0.7));
  bg.fy2 = static_cast<float>(rng.uniform(0.2, 0.7));
  bg.ph1 = static_cast<float>(rng.uniform(0.0, 6.28));
  bg.ph2 = static_cast<float>(rng.uniform(0.0, 6.28));

  const Index shape_count = regime == Regime::multi_object ? rng.uniform_int(2, 3) : 1;
  std::vector<MovingShape> shapes;  // back to front
  for (Index s = 0; s < shape_count; ++s) {
    MovingShape sh{};
    sh.disk = rng.uniform() < 0.5;
    sh.rx = static_cast<float>(rng.uniform(min_extent / 8.0, min_extent / 5.0));
    sh.ry = sh.disk ? sh.rx : static_cast<float>(rng.uniform(min_extent / 8.0, min_extent / 5.0));
    sh.cx = static_cast<float>(rng.uniform(W / 4.0, 3.0 * W / 4.0));
    sh.cy = static_cast<float>(rng.uniform(H / 4.0, 3.0 * H / 4.0));
    sh.tex = random_texture(rng);
    if (regime == Regime::scale_change) {
      // Keep the largest displacement |p - c| (1 - 1/k) within the bound.
      const float reach = std::max(sh.rx, sh.ry) * 1.5f;
      const float k_limit = reach / std::max(reach - max_disp, 1e-3f);
      float rate = static_cast<float>(rng.uniform(0.04, 0.08));
      rate = std::min(rate, (k_limit - 1.f) / static_cast<float>(T - 1));
      sh.zoom_rate = rng.uniform() < 0.5 ? rate : -std::min(rate, 0.5f / static_cast<float>(T - 1));
    } else if (options.flow_per_frame) {
      sh.velocity = *options.flow_per_frame;
    } else {
      sh.velocity = random_velocity(rng, T, max_disp);
    }
    shapes.push_back(sh);
  }

  TensorF::Vector video(3 * T * plane), flow = TensorF::Vector::Zero(2 * T * plane), valid(T * plane);
  auto px = [&](int c, Index t, Index i) -> float& { return video[(c * T + t) * plane + i]; };

  // Frame 0 rendered analytically.
  std::vector<char> covered0(static_cast<std::size_t>(plane), 0);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Index i = y * W + x;
      const auto fx = static_cast<float>(x), fy = static_cast<float>(y);
      const MovingShape* top = nullptr;
      for (const auto& sh : shapes)
        if (sh.covers(fx, fy)) top = &sh;
      covered0[static_cast<std::size_t>(i)] = top != nullptr;
      for (int c = 0; c < 3; ++c) px(c, 0, i) = top ? top->shade(c, fx, fy) : bg.shade(c, fx, fy);
      valid[i] = 1.f;
    }

  // Later frames sample frame 0 along each shape's backward mapping.
  for (Index t = 1; t < T; ++t)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index i = y * W + x;
        const MovingShape* top = nullptr;
        std::array<float, 2> q{};
        for (const auto& sh : shapes) {
          const auto src = sh.source(x, y, t);
          if (sh.covers(src[0], src[1])) {
            top = &sh;
            q = src;
          }
        }
        if (!top) {
          for (int c = 0; c < 3; ++c) px(c, t, i) = bg.shade(c, static_cast<float>(x), static_cast<float>(y));
          valid[t * plane + i] = covered0[static_cast<std::size_t>(i)] ? 0.f : 1.f;
          continue;
        }
        flow[t * plane + i] = q[0] - static_cast<float>(x);
        flow[(T + t) * plane + i] = q[1] - static_cast<float>(y);
        const bool inside = q[0] >= 0.f && q[0] <= static_cast<float>(W - 1) && q[1] >= 0.f &&
                            q[1] <= static_cast<float>(H - 1);
        for (int c = 0; c < 3; ++c)
          px(c, t, i) = inside ? bilinear(&video[(c * T) * plane], H, W, q[0], q[1]) : top->shade(c, q[0], q[1]);
        valid[t * plane + i] = inside ? 1.f : 0.f;
      }

  for (Index i = 0; i < video.size(); ++i) video[i] = std::clamp(video[i], 0.f, 1.f);
  return {VideoTensor{TensorF({3, T, H, W}, std::move(video))}, TensorF({2, T, H, W}, std::move(flow)),
          TensorF({T, H, W}, std::move(valid))};
}

}  // namespace deco
