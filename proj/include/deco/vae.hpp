#pragma once

// Gaussian encoders and the shared 3-D decoder.
//
// Compression is 4x8x8: two temporal and three spatial stride-2 stages, so
// clips must have T divisible by 4 and H, W divisible by 8. The decoder
// mirrors the encoder with nearest upsampling followed by convolution.

#include "deco/decouple.hpp"

#include <array>
#include <string>
#include <vector>

namespace deco {

/// Per-element Gaussian posterior, both tensors [N, D, T/4, H/8, W/8].
template <typename S>
struct LatentGaussian {
  Tensor<S> mu;
  Tensor<S> log_var;
};

enum class EncoderLayout {
  dedicated,  // one encoder per component, latents decoded separately
  concat,     // components stacked into 9 channels for a single encoder
};

struct VaeConfig {
  Index latent_channels = 16;
  Index width_stem = 8;
  Index width1 = 24;
  Index width2 = 48;
  EncoderLayout layout = EncoderLayout::dedicated;
};

inline constexpr Index kTemporalFactor = 4;
inline constexpr Index kSpatialFactor = 8;

inline void check_clip_extents(Index T, Index H, Index W) {
  if (T % kTemporalFactor != 0 || H % kSpatialFactor != 0 || W % kSpatialFactor != 0)
    throw ValidationError("encode: T must be a multiple of 4 and H, W multiples of 8; got T=" + std::to_string(T) +
                          " H=" + std::to_string(H) + " W=" + std::to_string(W));
}

template <typename S>
class Encoder {
 public:
  Encoder(ParameterStore<S>& store, const std::string& group, Index in_channels, const VaeConfig& cfg, Rng& rng)
      : latent_(cfg.latent_channels),
        stem_(store, group + ".stem", group, in_channels, cfg.width_stem, kKernel3, same3(), rng),
        down_{Conv3dLayer<S>(store, group + ".down1", group, cfg.width_stem, cfg.width1, kKernel3, strided3({2, 2, 2}), rng),
              Conv3dLayer<S>(store, group + ".down2", group, cfg.width1, cfg.width2, kKernel3, strided3({2, 2, 2}), rng),
              Conv3dLayer<S>(store, group + ".down3", group, cfg.width2, cfg.width2, kKernel3, strided3({1, 2, 2}), rng)},
        res_{ResBlock<S>(store, group + ".res1", group, cfg.width1, rng),
             ResBlock<S>(store, group + ".res2", group, cfg.width2, rng),
             ResBlock<S>(store, group + ".res3", group, cfg.width2, rng)},
        head_(store, group + ".head", group, cfg.width2, 2 * cfg.latent_channels, kKernel3, same3(), rng) {
    // log-variance half starts at zero, so the initial posterior has unit variance.
    auto& w = head_.weight.mutable_values();
    const Index per_out = w.size() / (2 * latent_);
    w.segment(latent_ * per_out, latent_ * per_out).setZero();
  }

  LatentGaussian<S> operator()(const Tensor<S>& x) const {
    if (x.rank() != 5) throw ValidationError("encode: expected [N,C,T,H,W], got " + shape_str(x.shape()));
    check_clip_extents(x.dim(2), x.dim(3), x.dim(4));
    Tensor<S> h = stem_(x);
    for (std::size_t i = 0; i < down_.size(); ++i) h = res_[i](down_[i](h));
    h = head_(leaky_relu(h));
    return {slice(h, 1, 0, latent_), slice(h, 1, latent_, latent_)};
  }

 private:
  Index latent_;
  Conv3dLayer<S> stem_;
  std::array<Conv3dLayer<S>, 3> down_;
  std::array<ResBlock<S>, 3> res_;
  Conv3dLayer<S> head_;
};

template <typename S>
class Decoder {
 public:
  static constexpr const char* kGroup = "decoder";

  Decoder(ParameterStore<S>& store, Index out_channels, const VaeConfig& cfg, Rng& rng)
      : latent_(cfg.latent_channels),
        stem_(store, "decoder.stem", kGroup, cfg.latent_channels, cfg.width2, kKernel3, same3(), rng),
        res_{ResBlock<S>(store, "decoder.res1", kGroup, cfg.width2, rng),
             ResBlock<S>(store, "decoder.res2", kGroup, cfg.width2, rng)},
        up_{Conv3dLayer<S>(store, "decoder.up1", kGroup, cfg.width2, cfg.width2, kKernel3, same3(), rng),
            Conv3dLayer<S>(store, "decoder.up2", kGroup, cfg.width2, cfg.width1, kKernel3, same3(), rng),
            Conv3dLayer<S>(store, "decoder.up3", kGroup, cfg.width1, cfg.width_stem, kKernel3, same3(), rng)},
        head_(store, "decoder.head", kGroup, cfg.width_stem, out_channels, kKernel3, same3(), rng) {}

  /// z [N, D, T', H', W'] -> [N, C_out, 4T', 8H', 8W'].
  Tensor<S> operator()(const Tensor<S>& z) const {
    if (z.rank() != 5 || z.dim(1) != latent_)
      throw ValidationError("decode: expected [N," + std::to_string(latent_) + ",T',H',W'], got " + shape_str(z.shape()));
    static constexpr Extent3 kFactors[] = {{1, 2, 2}, {2, 2, 2}, {2, 2, 2}};
    Tensor<S> h = stem_(z);
    for (const auto& block : res_) h = block(h);
    for (std::size_t i = 0; i < up_.size(); ++i) h = up_[i](upsample_nearest(leaky_relu(h), kFactors[i]));
    return head_(leaky_relu(h));
  }

 private:
  Index latent_;
  Conv3dLayer<S> stem_;
  std::array<ResBlock<S>, 2> res_;
  std::array<Conv3dLayer<S>, 3> up_;
  Conv3dLayer<S> head_;
};

/// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from `rng`.
/// With `inference` set, returns mu itself.
template <typename S>
Tensor<S> reparameterize(const LatentGaussian<S>& lat, Rng& rng, bool inference = false) {
  if (lat.mu.shape() != lat.log_var.shape())
    throw ValidationError("reparameterize: mu " + shape_str(lat.mu.shape()) + " vs log_var " +
                          shape_str(lat.log_var.shape()));
  if (inference) return lat.mu;
  const Tensor<S> eps = rng.normal_tensor<S>(lat.mu.shape());
  return add(lat.mu, mul(exp(scale(lat.log_var, S(0.5))), eps));
}

/// Mean over the T axis of a [N, 3, T, H, W] stack -> [N, 3, H, W].
template <typename S>
Tensor<S> keyframe_average(const Tensor<S>& stack) {
  if (stack.rank() != 5) throw ValidationError("keyframe_average: expected [N,3,T,H,W], got " + shape_str(stack.shape()));
  return reshape(mean_axis(stack, 2), {stack.dim(0), stack.dim(1), stack.dim(3), stack.dim(4)});
}

enum class ForwardMode { train, inference };

template <typename S>
struct VaeOutput {
  Tensor<S> keyframe_stack;  // decoded X_k
  Tensor<S> motion;          // decoded m stack
  Tensor<S> residual;        // decoded r stack
  Tensor<S> keyframe;        // T-average of keyframe_stack
  Tensor<S> video;           // recoupled frames, unclamped
  std::vector<LatentGaussian<S>> latents;  // k, m, r (one entry for the concat layout)
};

/// Encoders plus the shared decoder; parameters live in an external store.
template <typename S>
class DecoVae {
 public:
  DecoVae(ParameterStore<S>& store, const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.layout == EncoderLayout::dedicated) {
      for (const char* g : {"encoder_k", "encoder_m", "encoder_r"}) encoders_.emplace_back(store, g, 3, cfg, rng);
      decoder_.emplace_back(store, 3, cfg, rng);
    } else {
      encoders_.emplace_back(store, "encoder_concat", 9, cfg, rng);
      decoder_.emplace_back(store, 9, cfg, rng);
    }
  }

  const VaeConfig& config() const { return cfg_; }

  /// component 0 = keyframe, 1 = motion, 2 = residual (dedicated layout only).
  LatentGaussian<S> encode(int component, const Tensor<S>& x) const {
    if (cfg_.layout != EncoderLayout::dedicated) throw ValidationError("encode(component) needs dedicated encoders");
    if (component < 0 || component > 2) throw ValidationError("encode: component must be k, m or r");
    return encoders_[static_cast<std::size_t>(component)](x);
  }

  Tensor<S> decode(const Tensor<S>& z) const { return decoder_.front()(z); }

  VaeOutput<S> forward(const DecoupledComponents<S>& comps, Rng& rng, ForwardMode mode) const {
    const bool inference = mode == ForwardMode::inference;
    VaeOutput<S> out;
    if (cfg_.layout == EncoderLayout::dedicated) {
      const Tensor<S>* inputs[] = {&comps.keyframe_stack, &comps.motion, &comps.residual};
      std::vector<Tensor<S>> zs;
      for (std::size_t i = 0; i < 3; ++i) {
        out.latents.push_back(encoders_[i](*inputs[i]));
        zs.push_back(reparameterize(out.latents.back(), rng, inference));
      }
      // One decoder pass over the three latents stacked along the batch.
      const Index n = comps.motion.dim(0);
      const Tensor<S> decoded = decode(concat(zs, 0));
      out.keyframe_stack = slice(decoded, 0, 0, n);
      out.motion = slice(decoded, 0, n, n);
      out.residual = slice(decoded, 0, 2 * n, n);
    } else {
      out.latents.push_back(encoders_[0](concat<S>({comps.keyframe_stack, comps.motion, comps.residual}, 1)));
      const Tensor<S> decoded = decode(reparameterize(out.latents.back(), rng, inference));
      out.keyframe_stack = slice(decoded, 1, 0, 3);
      out.motion = slice(decoded, 1, 3, 3);
      out.residual = slice(decoded, 1, 6, 3);
    }
    out.keyframe = keyframe_average(out.keyframe_stack);
    out.video = recouple(out.keyframe, out.motion, out.residual);
    return out;
  }

 private:
  VaeConfig cfg_;
  std::vector<Encoder<S>> encoders_;
  std::vector<Decoder<S>> decoder_;
};

}  // namespace deco
