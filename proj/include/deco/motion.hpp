#pragma once

// Scale-space warping and the motion network.
//
// A motion field has three channels per pixel: flow-x and flow-y in pixels
// and a scale value in [0, 1] selecting a blur depth in the keyframe's
// Gaussian pyramid. Sampling is trilinear: bilinear in space with border
// clamping, linear across pyramid levels.

#include "deco/layers.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace deco {

inline constexpr Index kPyramidLevels = 4;
inline constexpr double kPyramidSigma0 = 0.5;

/// Blur of pyramid level s >= 1; level 0 is the unblurred image.
inline double pyramid_sigma(Index level) { return kPyramidSigma0 * std::ldexp(1.0, static_cast<int>(level)); }

/// Normalised 1-D Gaussian taps over [-r, r], r = ceil(3 sigma).
inline std::vector<double> gaussian_taps(double sigma) {
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

/// Mirror index without edge repetition (d c b | a b c d | c b a), any offset.
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace detail {

// One separable pass along the last axis (stride 1) or the second-to-last
// axis (stride = row length). Adjoint when `transpose` is set.
template <typename S>
void blur_pass(const S* src, S* dst, Index planes, Index H, Index W, bool vertical, const std::vector<double>& taps,
               bool transpose) {
  const auto radius = static_cast<Index>(taps.size() / 2);
  const Index n = vertical ? H : W;
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index base = (p * H + y) * W + x;
        const Index pos = vertical ? y : x;
        const Index step = vertical ? W : 1;
        const Index line = base - pos * step;
        for (Index k = -radius; k <= radius; ++k) {
          const Index q = line + reflect_index(pos + k, n) * step;
          const auto w = static_cast<S>(taps[static_cast<std::size_t>(k + radius)]);
          if (transpose) dst[q] += w * src[base];
          else dst[base] += w * src[q];
        }
      }
}

}  // namespace detail

/// Separable Gaussian blur over the last two axes with reflect padding.
template <typename S>
Tensor<S> gaussian_blur(const Tensor<S>& x, double sigma) {
  using V = typename Tensor<S>::Vector;
  if (x.rank() < 2) throw ValidationError("gaussian_blur: need at least 2 axes, got " + shape_str(x.shape()));
  const Index H = x.dim(-2), W = x.dim(-1);
  const Index planes = x.size() / (H * W);
  auto taps = gaussian_taps(sigma);
  V tmp = V::Zero(x.size());
  V out = V::Zero(x.size());
  detail::blur_pass(x.data(), tmp.data(), planes, H, W, false, taps, false);
  detail::blur_pass(tmp.data(), out.data(), planes, H, W, true, taps, false);
  auto xn = x.node();
  return Tensor<S>::make_result(x.shape(), std::move(out), {xn}, [xn, planes, H, W, taps](const V& g) {
    V tmp = V::Zero(g.size());
    detail::blur_pass(g.data(), tmp.data(), planes, H, W, true, taps, true);
    detail::blur_pass(tmp.data(), xn->grad_buffer().data(), planes, H, W, false, taps, true);
  });
}

/// Keyframe blurred at increasing Gaussian scales, stacked as [N, C, S, H, W].
template <typename S>
struct ScalePyramid {
  Tensor<S> levels;
  Index level_count() const { return levels.dim(-3); }
};

/// Builds the pyramid of a [C, H, W] or [N, C, H, W] keyframe.
template <typename S>
ScalePyramid<S> build_pyramid(const Tensor<S>& keyframe, Index levels = kPyramidLevels) {
  if (keyframe.rank() != 3 && keyframe.rank() != 4)
    throw ValidationError("build_pyramid: keyframe must be [C,H,W] or [N,C,H,W], got " + shape_str(keyframe.shape()));
  Shape shape = keyframe.shape();
  if (keyframe.rank() == 3) shape.insert(shape.begin(), 1);
  shape.insert(shape.end() - 2, 1);
  const Tensor<S> base = reshape(keyframe, shape);
  std::vector<Tensor<S>> stack{base};
  for (Index s = 1; s < levels; ++s) stack.push_back(gaussian_blur(base, pyramid_sigma(s)));
  return {concat(stack, 2)};
}

namespace detail {

struct WarpGeometry {
  Index n, c, levels, t, h, w;
};

template <typename S>
struct SamplePoint {
  Index x0, x1, y0, y1, l0, l1;
  S ax, ay, as;
  S dsx, dsy, dss;  // derivative of the clamped coordinate w.r.t. the raw motion value
};

template <typename S>
SamplePoint<S> sample_point(Index x, Index y, S fx, S fy, S sc, const WarpGeometry& g) {
  SamplePoint<S> p;
  const S wmax = static_cast<S>(g.w - 1), hmax = static_cast<S>(g.h - 1);
  const S smax = static_cast<S>(g.levels - 1);
  const S rx = static_cast<S>(x) + fx, ry = static_cast<S>(y) + fy;
  const S sx = std::clamp(rx, S(0), wmax), sy = std::clamp(ry, S(0), hmax);
  const S ss = std::clamp(sc, S(0), S(1)) * smax;
  p.dsx = (rx >= 0 && rx <= wmax) ? S(1) : S(0);
  p.dsy = (ry >= 0 && ry <= hmax) ? S(1) : S(0);
  p.dss = (sc >= 0 && sc <= 1) ? smax : S(0);
  p.x0 = static_cast<Index>(std::floor(sx));
  p.y0 = static_cast<Index>(std::floor(sy));
  p.l0 = static_cast<Index>(std::floor(ss));
  p.ax = sx - static_cast<S>(p.x0);
  p.ay = sy - static_cast<S>(p.y0);
  p.as = ss - static_cast<S>(p.l0);
  p.x1 = std::min(p.x0 + 1, g.w - 1);
  p.y1 = std::min(p.y0 + 1, g.h - 1);
  p.l1 = std::min(p.l0 + 1, g.levels - 1);
  return p;
}

}  // namespace detail

/// Samples the pyramid at every pixel of a motion stack.
///
/// pyramid: [N, C, S, H, W]; motion: [N, 3, T, H, W]; result [N, C, T, H, W].
/// Zero motion reproduces level 0 exactly.
template <typename S>
Tensor<S> warp(const ScalePyramid<S>& pyramid, const Tensor<S>& motion) {
  using V = typename Tensor<S>::Vector;
  const Tensor<S>& levels = pyramid.levels;
  if (levels.rank() != 5 || motion.rank() != 5 || motion.dim(1) != 3 || motion.dim(0) != levels.dim(0) ||
      motion.dim(3) != levels.dim(3) || motion.dim(4) != levels.dim(4))
    throw ValidationError("warp: pyramid " + shape_str(levels.shape()) + " incompatible with motion " +
                          shape_str(motion.shape()));
  const detail::WarpGeometry g{levels.dim(0), levels.dim(1), levels.dim(2), motion.dim(2), levels.dim(3),
                               levels.dim(4)};
  const Index plane = g.h * g.w;
  V out(g.n * g.c * g.t * plane);
  const S* P = levels.data();
  const S* M = motion.data();
  for (Index n = 0; n < g.n; ++n)
    for (Index t = 0; t < g.t; ++t)
      for (Index y = 0; y < g.h; ++y)
        for (Index x = 0; x < g.w; ++x) {
          const Index pix = y * g.w + x;
          const S* m = M + (n * 3 * g.t + t) * plane + pix;
          const auto p = detail::sample_point<S>(x, y, m[0], m[g.t * plane], m[2 * g.t * plane], g);
          for (Index c = 0; c < g.c; ++c) {
            const S* L0 = P + ((n * g.c + c) * g.levels + p.l0) * plane;
            const S* L1 = P + ((n * g.c + c) * g.levels + p.l1) * plane;
            auto bil = [&](const S* L) {
              return (S(1) - p.ay) * ((S(1) - p.ax) * L[p.y0 * g.w + p.x0] + p.ax * L[p.y0 * g.w + p.x1]) +
                     p.ay * ((S(1) - p.ax) * L[p.y1 * g.w + p.x0] + p.ax * L[p.y1 * g.w + p.x1]);
            };
            out[((n * g.c + c) * g.t + t) * plane + pix] = (S(1) - p.as) * bil(L0) + p.as * bil(L1);
          }
        }

  auto pn = levels.node(), mn = motion.node();
  return Tensor<S>::make_result(
      Shape{g.n, g.c, g.t, g.h, g.w}, std::move(out), {pn, mn}, [pn, mn, g](const V& grad) {
        const Index plane = g.h * g.w;
        const S* P = pn->value.data();
        const S* M = mn->value.data();
        S* gP = pn->requires_grad ? pn->grad_buffer().data() : nullptr;
        S* gM = mn->requires_grad ? mn->grad_buffer().data() : nullptr;
        for (Index n = 0; n < g.n; ++n)
          for (Index t = 0; t < g.t; ++t)
            for (Index y = 0; y < g.h; ++y)
              for (Index x = 0; x < g.w; ++x) {
                const Index pix = y * g.w + x;
                const Index m_off = (n * 3 * g.t + t) * plane + pix;
                const S* m = M + m_off;
                const auto p = detail::sample_point<S>(x, y, m[0], m[g.t * plane], m[2 * g.t * plane], g);
                const Index i00 = p.y0 * g.w + p.x0, i01 = p.y0 * g.w + p.x1;
                const Index i10 = p.y1 * g.w + p.x0, i11 = p.y1 * g.w + p.x1;
                S d_ax = 0, d_ay = 0, d_as = 0;
                for (Index c = 0; c < g.c; ++c) {
                  const S go = grad[((n * g.c + c) * g.t + t) * plane + pix];
                  const Index base = (n * g.c + c) * g.levels;
                  const S* L0 = P + (base + p.l0) * plane;
                  const S* L1 = P + (base + p.l1) * plane;
                  if (gP) {
                    const S wx0 = S(1) - p.ax, wy0 = S(1) - p.ay;
                    for (auto [L, wl] : {std::pair{p.l0, S(1) - p.as}, std::pair{p.l1, p.as}}) {
                      S* G = gP + (base + L) * plane;
                      const S gw = go * wl;
                      G[i00] += gw * wy0 * wx0;
                      G[i01] += gw * wy0 * p.ax;
                      G[i10] += gw * p.ay * wx0;
                      G[i11] += gw * p.ay * p.ax;
                    }
                  }
                  if (gM) {
                    auto bil = [&](const S* L) {
                      return (S(1) - p.ay) * ((S(1) - p.ax) * L[i00] + p.ax * L[i01]) +
                             p.ay * ((S(1) - p.ax) * L[i10] + p.ax * L[i11]);
                    };
                    auto dx = [&](const S* L) {
                      return (S(1) - p.ay) * (L[i01] - L[i00]) + p.ay * (L[i11] - L[i10]);
                    };
                    auto dy = [&](const S* L) {
                      return (S(1) - p.ax) * (L[i10] - L[i00]) + p.ax * (L[i11] - L[i01]);
                    };
                    d_ax += go * ((S(1) - p.as) * dx(L0) + p.as * dx(L1));
                    d_ay += go * ((S(1) - p.as) * dy(L0) + p.as * dy(L1));
                    d_as += go * (bil(L1) - bil(L0));
                  }
                }
                if (gM) {
                  gM[m_off] += d_ax * p.dsx;
                  gM[m_off + g.t * plane] += d_ay * p.dsy;
                  gM[m_off + 2 * g.t * plane] += d_as * p.dss;
                }
              }
      });
}

/// Warps a keyframe by one motion field or a stack of them.
///
/// keyframe [C,H,W] with motion [3,H,W] -> [C,H,W]; keyframe [C,H,W] with
/// motion [3,T,H,W] -> [C,T,H,W]; batched forms add a leading N to both.
template <typename S>
Tensor<S> warp(const Tensor<S>& keyframe, const Tensor<S>& motion) {
  const bool batched = keyframe.rank() == 4;
  if (keyframe.rank() != 3 && !batched) throw ValidationError("warp: keyframe must be rank 3 or 4");
  const bool stack = motion.rank() == keyframe.rank() + 1;
  if (!stack && motion.rank() != keyframe.rank())
    throw ValidationError("warp: motion " + shape_str(motion.shape()) + " does not match keyframe " +
                          shape_str(keyframe.shape()));
  Shape m5 = motion.shape();
  if (!stack) m5.insert(m5.end() - 2, 1);
  if (!batched) m5.insert(m5.begin(), 1);
  Tensor<S> out = warp(build_pyramid(keyframe), reshape(motion, m5));
  Shape result = out.shape();
  if (!stack) result.erase(result.end() - 3);
  if (!batched) result.erase(result.begin());
  return reshape(out, result);
}

struct MotionNetConfig {
  Index width = 32;
};

/// Small per-frame convolutional motion estimator: Concat(x_t, x_0) -> m_t.
///
/// Four 3x3 layers (6 -> w -> w -> w -> 3) with leaky ReLU between. The last
/// layer starts at zero, so an untrained net predicts the identity warp.
template <typename S>
class MotionNet {
 public:
  static constexpr const char* kGroup = "motion_net";

  MotionNet(ParameterStore<S>& store, Rng& rng, const MotionNetConfig& cfg = {}) {
    const Index w = cfg.width;
    const Index widths[] = {6, w, w, w, 3};
    for (int i = 0; i < 4; ++i)
      layers_.emplace_back(store, std::string(kGroup) + ".conv" + std::to_string(i), kGroup, widths[i], widths[i + 1],
                           kFrameKernel3, frame3(), rng);
    layers_.back().weight.mutable_values().setZero();
  }

  /// video [N,3,T,H,W] and keyframe [N,3,H,W] -> motion [N,3,T,H,W].
  Tensor<S> operator()(const Tensor<S>& video, const Tensor<S>& keyframe) const {
    if (video.rank() != 5 || keyframe.rank() != 4 || video.dim(0) != keyframe.dim(0) || video.dim(1) != 3 ||
        keyframe.dim(1) != 3 || video.dim(3) != keyframe.dim(2) || video.dim(4) != keyframe.dim(3))
      throw ValidationError("motion_forward: frames " + shape_str(video.shape()) + " and keyframe " +
                            shape_str(keyframe.shape()) + " disagree");
    Shape k5 = keyframe.shape();
    k5.insert(k5.begin() + 2, 1);
    Tensor<S> h = concat<S>({video, repeat(reshape(keyframe, k5), 2, video.dim(2))}, 1);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = leaky_relu(h);
    }
    return h;
  }

  /// Single pair: x_t, x_0 both [3,H,W] -> m_t [3,H,W].
  Tensor<S> forward_pair(const Tensor<S>& frame, const Tensor<S>& keyframe) const {
    if (frame.shape() != keyframe.shape() || frame.rank() != 3)
      throw ValidationError("motion_forward: frame " + shape_str(frame.shape()) + " and keyframe " +
                            shape_str(keyframe.shape()) + " must both be [3,H,W]");
    const Index H = frame.dim(1), W = frame.dim(2);
    Tensor<S> m = (*this)(reshape(frame, {1, 3, 1, H, W}), reshape(keyframe, {1, 3, H, W}));
    return reshape(m, {3, H, W});
  }

  const std::vector<Conv3dLayer<S>>& layers() const { return layers_; }

 private:
  std::vector<Conv3dLayer<S>> layers_;
};

}  // namespace deco
