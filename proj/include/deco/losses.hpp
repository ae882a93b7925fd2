#pragma once

// Training objective: reconstruction, KL, perceptual and adversarial terms.

#include "deco/vae.hpp"

#include <cstdint>
#include <optional>

namespace deco {

struct LossWeights {
  double recon = 4.0;
  double perceptual = 4.0;
  double kl = 1e-7;
  double adv = 0.2;
  // Global step at which the adversarial term engages.
  std::int64_t adv_start_step = 0;
  // Adds L1 supervision of the decoded motion and residual stacks.
  bool aux_components = true;
};

template <typename S>
Tensor<S> l1(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ValidationError("l1: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  return mean(abs(sub(a, b)));
}

/// Decoded and reference component stacks for the auxiliary term.
template <typename S>
struct ComponentPair {
  Tensor<S> motion_hat, motion, residual_hat, residual;
};

/// Mean absolute error of the frames, plus L1 on motion and residual when given.
template <typename S>
Tensor<S> recon_loss(const Tensor<S>& video_hat, const Tensor<S>& video,
                     const std::optional<ComponentPair<S>>& aux = std::nullopt) {
  Tensor<S> loss = l1(video_hat, video);
  if (aux) loss = add(loss, add(l1(aux->motion_hat, aux->motion), l1(aux->residual_hat, aux->residual)));
  return loss;
}

/// KL(q || N(0, I)) per element, averaged over elements and then over latents.
template <typename S>
Tensor<S> kl_loss(const std::vector<LatentGaussian<S>>& latents) {
  if (latents.empty()) throw ValidationError("kl_loss: no latents");
  Tensor<S> total;
  for (const auto& lat : latents) {
    const Tensor<S> term =
        scale(mean(sub(add_scalar(add(square(lat.mu), exp(lat.log_var)), S(-1)), lat.log_var)), S(0.5));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, S(1) / static_cast<S>(latents.size()));
}

/// Frozen random per-frame feature extractor for the perceptual term.
template <typename S>
class FeatureNet {
 public:
  explicit FeatureNet(std::uint64_t seed = 1234) {
    Rng rng(seed);
    layers_.emplace_back(store_, "features.conv0", "features", 3, 8, kFrameKernel3, frame3(), rng);
    layers_.emplace_back(store_, "features.conv1", "features", 8, 16, kFrameKernel3,
                         Conv3dOptions{{1, 2, 2}, {0, 1, 1}}, rng);
    layers_.emplace_back(store_, "features.conv2", "features", 16, 16, kFrameKernel3,
                         Conv3dOptions{{1, 2, 2}, {0, 1, 1}}, rng);
    store_.set_all_trainable(false);
  }

  std::vector<Tensor<S>> operator()(const Tensor<S>& video) const {
    std::vector<Tensor<S>> maps;
    Tensor<S> h = video;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = leaky_relu(h);
      maps.push_back(h);
    }
    return maps;
  }

 private:
  ParameterStore<S> store_;
  std::vector<Conv3dLayer<S>> layers_;
};

/// Mean squared feature distance, averaged over the extractor's layers.
template <typename S>
Tensor<S> perceptual_loss(const Tensor<S>& video_hat, const Tensor<S>& video, const FeatureNet<S>& net) {
  if (video_hat.shape() != video.shape())
    throw ValidationError("perceptual_loss: shapes " + shape_str(video_hat.shape()) + " and " +
                          shape_str(video.shape()) + " differ");
  const auto a = net(video_hat);
  const auto b = net(video);
  Tensor<S> total;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor<S> term = mean(square(sub(a[i], b[i])));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, S(1) / static_cast<S>(a.size()));
}

/// Patch discriminator: four stride-2 3x3x3 convolutions, 3 -> 32 -> 64 -> 64 -> 1.
template <typename S>
class Discriminator {
 public:
  static constexpr const char* kGroup = "discriminator";

  Discriminator(ParameterStore<S>& store, Rng& rng) {
    const Index widths[] = {3, 32, 64, 64, 1};
    for (int i = 0; i < 4; ++i)
      layers_.emplace_back(store, std::string(kGroup) + ".conv" + std::to_string(i), kGroup, widths[i], widths[i + 1],
                           kKernel3, strided3({2, 2, 2}), rng);
  }

  /// Patch logits for a [N, 3, T, H, W] batch.
  Tensor<S> operator()(const Tensor<S>& video) const {
    Tensor<S> h = video;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = leaky_relu(h);
    }
    return h;
  }

 private:
  std::vector<Conv3dLayer<S>> layers_;
};

/// Non-saturating generator loss: mean softplus(-D(fake)).
template <typename S>
Tensor<S> generator_adv_loss(const Discriminator<S>& disc, const Tensor<S>& fake) {
  return mean(softplus(neg(disc(fake))));
}

/// mean softplus(-D(real)) + mean softplus(D(fake)), with `fake` detached.
template <typename S>
Tensor<S> discriminator_loss(const Discriminator<S>& disc, const Tensor<S>& real, const Tensor<S>& fake) {
  if (real.shape() != fake.shape())
    throw ValidationError("adv_losses: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
  return add(mean(softplus(neg(disc(real)))), mean(softplus(disc(fake.detach()))));
}

template <typename S>
struct AdvLosses {
  Tensor<S> generator;
  Tensor<S> discriminator;
};

template <typename S>
AdvLosses<S> adv_losses(const Discriminator<S>& disc, const Tensor<S>& real, const Tensor<S>& fake) {
  return {generator_adv_loss(disc, fake), discriminator_loss(disc, real, fake)};
}

/// Loss terms before weighting; `adv` may be undefined before the gate.
template <typename S>
struct LossParts {
  Tensor<S> recon, kl, adv, perceptual;
};

inline bool adversarial_active(const LossWeights& w, std::int64_t step) { return step >= w.adv_start_step; }

/// recon*L_recon + kl*L_kl + adv*L_adv + p*L_p, the adversarial term gated on step.
template <typename S>
Tensor<S> total_loss(const LossParts<S>& parts, const LossWeights& w, std::int64_t step) {
  if (step < 0) throw ValidationError("total_loss: step must be >= 0");
  Tensor<S> total = add(scale(parts.recon, static_cast<S>(w.recon)), scale(parts.kl, static_cast<S>(w.kl)));
  total = add(total, scale(parts.perceptual, static_cast<S>(w.perceptual)));
  if (adversarial_active(w, step) && parts.adv.defined()) total = add(total, scale(parts.adv, static_cast<S>(w.adv)));
  return total;
}

}  // namespace deco
