#pragma once

// 3-D convolution (im2col + GEMM) and nearest-neighbour upsampling.
//
// Layouts: input [N x C x T x H x W] (or [C x T x H x W] for a single clip),
// weight [C_out x C_in x kT x kH x kW], bias [C_out]. Each sample is lowered
// in chunks of whole output time slices so the column buffer stays small;
// the columns are rebuilt in the backward pass instead of being stored.

#include "deco/ops.hpp"

#include <array>

namespace deco {

using Extent3 = std::array<Index, 3>;

struct Conv3dOptions {
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
};

namespace detail {

struct ConvGeometry {
  Index n = 1, c_in = 0, c_out = 0;
  Extent3 in{}, kernel{}, out{}, stride{}, pad{};
  Index in_volume() const { return in[0] * in[1] * in[2]; }
  Index out_plane() const { return out[1] * out[2]; }
  Index out_volume() const { return out[0] * out_plane(); }
  Index k_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  Index rows() const { return c_in * k_volume(); }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& weight, const Conv3dOptions& opt) {
  static constexpr const char* kAxis[] = {"T", "H", "W"};
  if (input.size() != 4 && input.size() != 5)
    throw ValidationError("conv3d: input must be [C,T,H,W] or [N,C,T,H,W], got " + shape_str(input));
  if (weight.size() != 5) throw ValidationError("conv3d: weight must be rank 5, got " + shape_str(weight));
  const std::size_t base = input.size() - 4;
  ConvGeometry g;
  g.n = base ? input[0] : 1;
  g.c_in = input[base];
  g.c_out = weight[0];
  if (weight[1] != g.c_in)
    throw ValidationError("conv3d: axis C: input has " + std::to_string(g.c_in) + " channels, weight expects " +
                          std::to_string(weight[1]));
  for (int a = 0; a < 3; ++a) {
    g.in[a] = input[base + 1 + a];
    g.kernel[a] = weight[2 + a];
    g.stride[a] = opt.stride[a];
    g.pad[a] = opt.padding[a];
    if (g.stride[a] < 1 || g.pad[a] < 0)
      throw ValidationError(std::string("conv3d: axis ") + kAxis[a] + ": stride must be >= 1 and padding >= 0");
    const Index padded = g.in[a] + 2 * g.pad[a];
    if (g.kernel[a] > padded)
      throw ValidationError(std::string("conv3d: axis ") + kAxis[a] + ": kernel extent " +
                            std::to_string(g.kernel[a]) + " exceeds padded input extent " + std::to_string(padded));
    g.out[a] = (padded - g.kernel[a]) / g.stride[a] + 1;
  }
  return g;
}

// Output columns [lo, hi) along W whose input index for kernel tap d is in range.
inline std::pair<Index, Index> valid_w(const ConvGeometry& g, Index d) {
  const Index s = g.stride[2], shift = g.pad[2] - d;
  const Index lo = shift > 0 ? (shift + s - 1) / s : 0;
  const Index top = g.in[2] - 1 + shift;
  const Index first = std::min(lo, g.out[2]);
  if (top < 0) return {first, first};
  return {first, std::clamp<Index>(top / s + 1, first, g.out[2])};
}

// Lowers output time slices [t0, t1) of one sample into a column matrix.
template <typename S>
void im2col(const S* src, const ConvGeometry& g, Index t0, Index t1, S* cols) {
  const Index plane = g.out_plane();
  const Index ncols = (t1 - t0) * plane;
  const auto [T, H, W] = g.in;
  const Index Wo = g.out[2], sw = g.stride[2];
  for (Index c = 0; c < g.c_in; ++c)
    for (Index a = 0; a < g.kernel[0]; ++a)
      for (Index b = 0; b < g.kernel[1]; ++b)
        for (Index d = 0; d < g.kernel[2]; ++d) {
          const Index row = ((c * g.kernel[0] + a) * g.kernel[1] + b) * g.kernel[2] + d;
          const auto [lo, hi] = valid_w(g, d);
          const Index offset = d - g.pad[2];
          S* dst = cols + row * ncols;
          for (Index to = t0; to < t1; ++to) {
            const Index ti = to * g.stride[0] - g.pad[0] + a;
            for (Index ho = 0; ho < g.out[1]; ++ho) {
              S* line = dst + ((to - t0) * g.out[1] + ho) * Wo;
              const Index hi_row = ho * g.stride[1] - g.pad[1] + b;
              if (ti < 0 || ti >= T || hi_row < 0 || hi_row >= H) {
                std::fill(line, line + Wo, S(0));
                continue;
              }
              const S* in_line = src + ((c * T + ti) * H + hi_row) * W + offset;
              std::fill(line, line + lo, S(0));
              if (sw == 1) {
                std::copy(in_line + lo, in_line + hi, line + lo);
              } else {
                for (Index wo = lo; wo < hi; ++wo) line[wo] = in_line[wo * sw];
              }
              std::fill(line + hi, line + Wo, S(0));
            }
          }
        }
}

template <typename S>
void col2im(const S* cols, const ConvGeometry& g, Index t0, Index t1, S* dst) {
  const Index plane = g.out_plane();
  const Index ncols = (t1 - t0) * plane;
  const auto [T, H, W] = g.in;
  const Index Wo = g.out[2], sw = g.stride[2];
  for (Index c = 0; c < g.c_in; ++c)
    for (Index a = 0; a < g.kernel[0]; ++a)
      for (Index b = 0; b < g.kernel[1]; ++b)
        for (Index d = 0; d < g.kernel[2]; ++d) {
          const Index row = ((c * g.kernel[0] + a) * g.kernel[1] + b) * g.kernel[2] + d;
          const auto [lo, hi] = valid_w(g, d);
          const Index offset = d - g.pad[2];
          const S* src = cols + row * ncols;
          for (Index to = t0; to < t1; ++to) {
            const Index ti = to * g.stride[0] - g.pad[0] + a;
            if (ti < 0 || ti >= T) continue;
            for (Index ho = 0; ho < g.out[1]; ++ho) {
              const Index hi_row = ho * g.stride[1] - g.pad[1] + b;
              if (hi_row < 0 || hi_row >= H) continue;
              const S* line = src + ((to - t0) * g.out[1] + ho) * Wo;
              S* out_line = dst + ((c * T + ti) * H + hi_row) * W + offset;
              if (sw == 1) {
                using Row = Eigen::Array<S, Eigen::Dynamic, 1>;
                Eigen::Map<Row>(out_line + lo, hi - lo) += Eigen::Map<const Row>(line + lo, hi - lo);
              } else {
                for (Index wo = lo; wo < hi; ++wo) out_line[wo * sw] += line[wo];
              }
            }
          }
        }
}

// Output time slices per lowering chunk, keeping the column buffer near 2 MiB.
inline Index conv_chunk(const ConvGeometry& g) {
  const Index budget = Index{1} << 19;
  return std::clamp<Index>(budget / std::max<Index>(1, g.rows() * g.out_plane()), 1, g.out[0]);
}

}  // namespace detail

/// Cross-correlation with zero padding. `bias` may be an undefined tensor.
template <typename S>
Tensor<S> conv3d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 const Conv3dOptions& opt = {}) {
  using V = typename Tensor<S>::Vector;
  // Buffers are row-major [rows x cols]; they are viewed column-major as the
  // transpose, which suits Eigen's kernels better for few output channels.
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using MapC = Eigen::Map<const Mat>;
  using Map = Eigen::Map<Mat>;

  const auto g = detail::conv_geometry(input.shape(), weight.shape(), opt);
  if (bias.defined() && bias.size() != g.c_out)
    throw ValidationError("conv3d: bias has " + std::to_string(bias.size()) + " entries, expected " +
                          std::to_string(g.c_out));
  Shape shape = input.rank() == 5 ? Shape{g.n, g.c_out, g.out[0], g.out[1], g.out[2]}
                                  : Shape{g.c_out, g.out[0], g.out[1], g.out[2]};
  const Index in_sample = g.c_in * g.in_volume();
  const Index out_sample = g.c_out * g.out_volume();
  const Index chunk = detail::conv_chunk(g);

  V out(g.n * out_sample);
  MapC wt(weight.data(), g.rows(), g.c_out);
  std::vector<S> cols(static_cast<std::size_t>(g.rows() * chunk * g.out_plane()));
  for (Index n = 0; n < g.n; ++n) {
    Map yt(out.data() + n * out_sample, g.out_volume(), g.c_out);
    for (Index t0 = 0; t0 < g.out[0]; t0 += chunk) {
      const Index t1 = std::min(g.out[0], t0 + chunk);
      const Index ncols = (t1 - t0) * g.out_plane();
      detail::im2col(input.data() + n * in_sample, g, t0, t1, cols.data());
      yt.middleRows(t0 * g.out_plane(), ncols).noalias() = MapC(cols.data(), ncols, g.rows()) * wt;
    }
    if (bias.defined()) yt.rowwise() += bias.values().transpose();
  }

  auto xn = input.node(), wn = weight.node();
  std::vector<typename Tensor<S>::NodePtr> parents{xn, wn};
  typename Tensor<S>::NodePtr bn;
  if (bias.defined()) {
    bn = bias.node();
    parents.push_back(bn);
  }
  return Tensor<S>::make_result(std::move(shape), std::move(out), parents, [xn, wn, bn, g, chunk](const V& grad) {
    const Index in_sample = g.c_in * g.in_volume();
    const Index out_sample = g.c_out * g.out_volume();
    MapC wt(wn->value.data(), g.rows(), g.c_out);
    std::vector<S> cols(static_cast<std::size_t>(g.rows() * chunk * g.out_plane()));
    Mat dwt;
    if (wn->requires_grad) dwt = Mat::Zero(g.rows(), g.c_out);
    for (Index n = 0; n < g.n; ++n) {
      MapC dyt(grad.data() + n * out_sample, g.out_volume(), g.c_out);
      if (bn && bn->requires_grad) bn->grad_buffer() += dyt.colwise().sum().transpose();
      for (Index t0 = 0; t0 < g.out[0]; t0 += chunk) {
        const Index t1 = std::min(g.out[0], t0 + chunk);
        const Index ncols = (t1 - t0) * g.out_plane();
        const auto dy_chunk = dyt.middleRows(t0 * g.out_plane(), ncols);
        if (wn->requires_grad) {
          detail::im2col(xn->value.data() + n * in_sample, g, t0, t1, cols.data());
          dwt.noalias() += MapC(cols.data(), ncols, g.rows()).transpose() * dy_chunk;
        }
        if (xn->requires_grad) {
          Map dcols(cols.data(), ncols, g.rows());
          dcols.noalias() = dy_chunk * wt.transpose();
          detail::col2im(cols.data(), g, t0, t1, xn->grad_buffer().data() + n * in_sample);
        }
      }
    }
    if (wn->requires_grad) wn->accumulate(Eigen::Map<const V>(dwt.data(), dwt.size()));
  });
}

/// Replicates every element `factor[a]` times along T, H and W.
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& input, const Extent3& factor) {
  using V = typename Tensor<S>::Vector;
  if (input.rank() != 4 && input.rank() != 5)
    throw ValidationError("upsample_nearest: expected rank 4 or 5, got " + shape_str(input.shape()));
  for (Index f : factor)
    if (f < 1) throw ValidationError("upsample_nearest: factors must be >= 1");
  const int base = input.rank() - 3;
  Index planes = 1;
  for (int i = 0; i < base; ++i) planes *= input.dim(i);
  const Index T = input.dim(base), H = input.dim(base + 1), W = input.dim(base + 2);
  const Index To = T * factor[0], Ho = H * factor[1], Wo = W * factor[2];
  Shape shape = input.shape();
  shape[base] = To;
  shape[base + 1] = Ho;
  shape[base + 2] = Wo;

  V out(planes * To * Ho * Wo);
  const S* src = input.data();
  for (Index p = 0; p < planes; ++p)
    for (Index t = 0; t < To; ++t)
      for (Index h = 0; h < Ho; ++h) {
        const S* in_line = src + ((p * T + t / factor[0]) * H + h / factor[1]) * W;
        S* line = out.data() + ((p * To + t) * Ho + h) * Wo;
        for (Index w = 0; w < Wo; ++w) line[w] = in_line[w / factor[2]];
      }

  auto xn = input.node();
  return Tensor<S>::make_result(std::move(shape), std::move(out), {xn},
                                [xn, planes, T, H, W, To, Ho, Wo, factor](const V& grad) {
                                  V& gx = xn->grad_buffer();
                                  for (Index p = 0; p < planes; ++p)
                                    for (Index t = 0; t < To; ++t)
                                      for (Index h = 0; h < Ho; ++h) {
                                        S* in_line = gx.data() + ((p * T + t / factor[0]) * H + h / factor[1]) * W;
                                        const S* line = grad.data() + ((p * To + t) * Ho + h) * Wo;
                                        for (Index w = 0; w < Wo; ++w) in_line[w / factor[2]] += line[w];
                                      }
                                });
}

}  // namespace deco
