#include "deco/gradcheck_suite.hpp"

#include "deco/decouple.hpp"
#include "deco/losses.hpp"

namespace deco {
namespace {

TensorD uniform(Rng& rng, const Shape& s, double lo, double hi) { return rng.uniform_tensor<double>(s, lo, hi); }

VaeConfig small_vae() { return {4, 4, 5, 6, EncoderLayout::dedicated}; }

GradCheckReport elementwise(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) {
    const TensorD a = x[0], b = x[1];
    TensorD y = add(mul(a, b), sub(exp(a), leaky_relu(b)));
    y = add(y, log(add_scalar(square(a), 0.5)));
    y = add(y, softplus(mul(a, scale(b, 2.0))));
    return add(y, add(scale(repeat(mean_axis(a, 1), 1, a.dim(1)), 0.5), add_scalar(mul(mean(b), sum(a)), 0.0)));
  };
  return grad_check("elementwise", fn, std::vector<Shape>{{3, 4, 5}, {3, 4, 5}}, seed);
}

GradCheckReport structural(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) {
    const TensorD a = reshape(x[0], {2, 3, 4});
    const TensorD c = concat<double>({slice(a, 2, 1, 2), x[1]}, 2);
    return mul(c, c);
  };
  return grad_check("reshape-slice-concat", fn, std::vector<Shape>{{24}, {2, 3, 5}}, seed);
}

GradCheckReport conv(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) { return conv3d(x[0], x[1], x[2], Conv3dOptions{{1, 2, 2}, {1, 1, 1}}); };
  Rng rng(seed);
  return grad_check("conv3d", fn,
                    {uniform(rng, {2, 3, 4, 5, 6}, -1, 1), uniform(rng, {4, 3, 3, 3, 3}, -1, 1), uniform(rng, {4}, -1, 1)},
                    seed, {"input", "weight", "bias"});
}

GradCheckReport conv_strided(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) {
    return upsample_nearest(conv3d(x[0], x[1], TensorD{}, Conv3dOptions{{2, 2, 2}, {1, 1, 1}}), {2, 2, 2});
  };
  Rng rng(seed);
  return grad_check("conv3d-stride2-upsample", fn, {uniform(rng, {1, 2, 4, 6, 6}, -1, 1), uniform(rng, {3, 2, 3, 3, 3}, -1, 1)},
                    seed, {"input", "weight"});
}

GradCheckReport blur(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) { return gaussian_blur(x[0], 1.0); };
  return grad_check("gaussian_blur", fn, std::vector<Shape>{{2, 3, 7, 9}}, seed);
}

GradCheckReport warp_case(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) { return warp(build_pyramid(x[0]), x[1]); };
  Rng rng(seed);
  const TensorD keyframe = uniform(rng, {1, 3, 9, 10}, 0, 1);
  // Flow in [-2.5, 2.5]; scale kept inside (0, 1) so the clamp is inactive.
  const TensorD flow = uniform(rng, {1, 2, 2, 9, 10}, -2.5, 2.5);
  const TensorD level = uniform(rng, {1, 1, 2, 9, 10}, 0.05, 0.95);
  return grad_check("warp", fn, {keyframe, concat<double>({flow, level}, 1)}, seed, {"keyframe", "motion"});
}

GradCheckReport reparam(std::uint64_t seed) {
  auto fn = [seed](const std::vector<TensorD>& x) {
    Rng noise(seed + 17);
    return reparameterize(LatentGaussian<double>{x[0], x[1]}, noise);
  };
  return grad_check("reparameterize", fn, std::vector<Shape>{{2, 4, 1, 2, 2}, {2, 4, 1, 2, 2}}, seed);
}

GradCheckReport kl(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) {
    return kl_loss(std::vector<LatentGaussian<double>>{{x[0], x[1]}, {x[2], x[3]}});
  };
  return grad_check("kl_loss", fn, std::vector<Shape>{{2, 3, 2}, {2, 3, 2}, {5}, {5}}, seed);
}

GradCheckReport decoder(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<double> store;
  const Decoder<double> dec(store, 3, small_vae(), rng);
  const TensorD z = uniform(rng, {1, 4, 1, 1, 2}, -1, 1);
  auto fn = [&dec](const std::vector<TensorD>& x) { return dec(x[0]); };
  // Parameters are handles into the decoder, so perturbing them moves its output.
  return grad_check("decoder", fn,
                    {z, store.find("decoder.stem.weight")->tensor, store.find("decoder.up2.weight")->tensor,
                     store.find("decoder.head.weight")->tensor, store.find("decoder.head.bias")->tensor},
                    seed, {"z", "stem.weight", "up2.weight", "head.weight", "head.bias"});
}

GradCheckReport encoder(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<double> store;
  const Encoder<double> enc(store, "encoder_k", 3, small_vae(), rng);
  const TensorD x = uniform(rng, {1, 3, 4, 8, 8}, -1, 1);
  auto fn = [&enc](const std::vector<TensorD>& in) {
    const LatentGaussian<double> lat = enc(in[0]);
    return concat<double>({lat.mu, lat.log_var}, 1);
  };
  return grad_check("encoder", fn, {x, store.find("encoder_k.stem.weight")->tensor}, seed, {"x", "stem.weight"});
}

GradCheckReport recoupling(std::uint64_t seed) {
  auto fn = [](const std::vector<TensorD>& x) {
    const DecoupledComponents<double> c = decouple_with_motion(x[0], x[1]);
    return concat<double>({recouple(c.keyframe, x[1], x[2]), c.residual}, 1);
  };
  Rng rng(seed);
  const TensorD video = uniform(rng, {1, 3, 2, 8, 9}, 0, 1);
  const TensorD flow = uniform(rng, {1, 2, 2, 8, 9}, -1.5, 1.5);
  const TensorD level = uniform(rng, {1, 1, 2, 8, 9}, 0.05, 0.95);
  return grad_check("decouple-recouple", fn, {video, concat<double>({flow, level}, 1), uniform(rng, {1, 3, 2, 8, 9}, -1, 1)},
                    seed, {"video", "motion", "residual"});
}

GradCheckReport motion_net(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<double> store;
  const MotionNet<double> net(store, rng, MotionNetConfig{4});
  // The last layer starts at zero; give it weights so every layer is exercised.
  TensorD last = store.find("motion_net.conv3.weight")->tensor;
  last.mutable_values() = uniform(rng, last.shape(), -0.3, 0.3).values();
  const TensorD video = uniform(rng, {1, 3, 2, 6, 7}, 0, 1);
  auto fn = [&net](const std::vector<TensorD>& x) { return net(x[0], first_frame(x[0])); };
  return grad_check("motion_net", fn, {video, store.find("motion_net.conv0.weight")->tensor, last}, seed,
                    {"video", "conv0.weight", "conv3.weight"});
}

GradCheckReport generator_objective(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<double> store;
  const Discriminator<double> disc(store, rng);
  const FeatureNet<double> features(seed);
  const TensorD real = uniform(rng, {1, 3, 2, 8, 8}, 0, 1);
  auto fn = [&](const std::vector<TensorD>& x) {
    const TensorD y = add(perceptual_loss(x[0], real, features), generator_adv_loss(disc, x[0]));
    return add(y, recon_loss(x[0], real));
  };
  return grad_check("generator-losses", fn,
                    {uniform(rng, {1, 3, 2, 8, 8}, 0, 1), store.find("discriminator.conv0.weight")->tensor}, seed,
                    {"fake", "disc.conv0.weight"});
}

GradCheckReport discriminator_objective(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<double> store;
  const Discriminator<double> disc(store, rng);
  const TensorD real = uniform(rng, {1, 3, 2, 8, 8}, 0, 1);
  const TensorD fake = uniform(rng, {1, 3, 2, 8, 8}, 0, 1);
  auto fn = [&](const std::vector<TensorD>&) { return discriminator_loss(disc, real, fake); };
  return grad_check("discriminator-loss", fn,
                    {store.find("discriminator.conv0.weight")->tensor, store.find("discriminator.conv3.bias")->tensor},
                    seed, {"conv0.weight", "conv3.bias"});
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_cases() {
  static const std::vector<GradCheckCase> cases{
      {"elementwise", elementwise},  {"reshape-slice-concat", structural}, {"conv3d", conv},
      {"conv3d-stride2-upsample", conv_strided}, {"gaussian_blur", blur}, {"warp", warp_case},
      {"reparameterize", reparam}, {"kl_loss", kl}, {"decoder", decoder}, {"encoder", encoder},
      {"decouple-recouple", recoupling}, {"motion_net", motion_net}, {"generator-losses", generator_objective},
      {"discriminator-loss", discriminator_objective},
  };
  return cases;
}

std::vector<GradCheckReport> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds) {
  std::vector<GradCheckReport> out;
  for (const auto& c : gradcheck_cases())
    for (auto seed : seeds) out.push_back(c.run(seed));
  return out;
}

}  // namespace deco
