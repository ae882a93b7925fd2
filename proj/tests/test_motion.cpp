#include "deco/gradcheck.hpp"
#include "deco/motion_train.hpp"
#include "deco/video_io.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <memory>

using namespace deco;

namespace {

TensorF level(const ScalePyramid<float>& p, Index s) {
  const Index N = p.levels.dim(0), C = p.levels.dim(1), H = p.levels.dim(3), W = p.levels.dim(4);
  return reshape(slice(p.levels, 2, s, 1), {N, C, H, W});
}

TensorF motion_field(Index T, Index H, Index W, float fx, float fy, float scale) {
  TensorF m = TensorF::zeros({1, 3, T, H, W});
  const Index n = T * H * W;
  m.mutable_values().segment(0, n).setConstant(fx);
  m.mutable_values().segment(n, n).setConstant(fy);
  m.mutable_values().segment(2 * n, n).setConstant(scale);
  return m;
}

std::vector<TensorF> translate_clips(std::uint64_t base, Index count) {
  std::vector<TensorF> out;
  for (Index i = 0; i < count; ++i)
    out.push_back(gen_synthetic(base + static_cast<std::uint64_t>(i), 8, 32, 32, Regime::translate).video.frames);
  return out;
}

}  // namespace

TEST_CASE("pyramid level 0 is the keyframe bitwise") {
  Rng rng(1);
  const TensorF key = rng.uniform_tensor<float>({2, 3, 9, 11}, 0, 1);
  const ScalePyramid<float> p = build_pyramid(key);
  CHECK(p.levels.shape() == Shape{2, 3, kPyramidLevels, 9, 11});
  CHECK(level(p, 0).values() == key.values());
}

TEST_CASE("blur of a constant image stays constant") {
  const ScalePyramid<float> p = build_pyramid(TensorF::constant({3, 12, 10}, 0.375f));
  for (Index s = 0; s < kPyramidLevels; ++s)
    CHECK((level(p, s).values().array() - 0.375f).abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("pyramid levels match direct 2-D Gaussian evaluation") {
  const Index H = 21, W = 19;
  std::vector<double> impulse(static_cast<std::size_t>(H * W), 0.0);
  impulse[static_cast<std::size_t>(10 * W + 9)] = 1.0;
  TensorF key = TensorF::zeros({1, H, W});
  key.mutable_values()[10 * W + 9] = 1.0f;
  const ScalePyramid<float> p = build_pyramid(key);
  for (Index s = 1; s < kPyramidLevels; ++s) {
    const auto ref = oracle::gaussian2d(impulse, H, W, pyramid_sigma(s));
    const TensorF got = level(p, s);
    double worst = 0;
    for (Index i = 0; i < H * W; ++i) worst = std::max(worst, std::abs(got[i] - ref[static_cast<std::size_t>(i)]));
    INFO("level " << s);
    CHECK(worst <= 1e-5);
  }
  // A random image near the border exercises the reflection.
  Rng rng(2);
  const TensorF img = rng.uniform_tensor<float>({1, 7, 9}, 0, 1);
  const std::vector<double> img_d(img.values().data(), img.values().data() + img.size());
  const TensorF got = level(build_pyramid(img), 1);
  const auto ref = oracle::gaussian2d(img_d, 7, 9, pyramid_sigma(1));
  for (Index i = 0; i < img.size(); ++i) CHECK(got[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-5));
}

TEST_CASE("pyramid sigmas and reflection") {
  CHECK(pyramid_sigma(1) == 1.0);
  CHECK(pyramid_sigma(3) == 4.0);
  CHECK(gaussian_taps(1.0).size() == 7);
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(-9, 5) == 1);
  CHECK(reflect_index(0, 1) == 0);
}

TEST_CASE("zero motion is an exact identity") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const TensorF key = rng.uniform_tensor<float>({1, 3, 16, 20}, -2, 2);
    const TensorF out = warp(key, motion_field(3, 16, 20, 0, 0, 0));
    for (Index t = 0; t < 3; ++t)
      for (Index c = 0; c < 3; ++c)
        CHECK(out.values().segment((c * 3 + t) * 320, 320) == key.values().segment(c * 320, 320));
  }
}

TEST_CASE("constant integer flow is an exact border-clamped shift") {
  Rng rng(4);
  const Index H = 6, W = 8;
  const TensorF key = rng.uniform_tensor<float>({3, H, W}, 0, 1);
  TensorF m = TensorF::zeros({3, H, W});
  m.mutable_values().segment(0, H * W).setConstant(2.0f);
  const TensorF out = warp(key, m);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) CHECK(out[(c * H + y) * W + x] == key[(c * H + y) * W + std::min(x + 2, W - 1)]);
  // Vertical, negative.
  m.mutable_values().setZero();
  m.mutable_values().segment(H * W, H * W).setConstant(-3.0f);
  const TensorF up = warp(key, m);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) CHECK(up[(c * H + y) * W + x] == key[(c * H + std::max<Index>(y - 3, 0)) * W + x]);
}

TEST_CASE("scale one samples the coarsest level and the scale is clamped") {
  Rng rng(5);
  const TensorF key = rng.uniform_tensor<float>({1, 3, 12, 12}, 0, 1);
  const TensorF top = level(build_pyramid(key), kPyramidLevels - 1);
  const TensorF at_one = warp(key, motion_field(1, 12, 12, 0, 0, 1.0f));
  CHECK((at_one.values() - top.values()).cwiseAbs().maxCoeff() <= 1e-5f);
  CHECK(warp(key, motion_field(1, 12, 12, 0, 0, 7.5f)).values() == at_one.values());
  CHECK(warp(key, motion_field(1, 12, 12, 0, 0, -3.0f)).values() == key.values());
  // Half way between two levels blends them equally.
  const ScalePyramid<float> p = build_pyramid(key);
  const TensorF mid = warp(key, motion_field(1, 12, 12, 0, 0, 0.5f / static_cast<float>(kPyramidLevels - 1)));
  const TensorF blend = scale(add(level(p, 0), level(p, 1)), 0.5f);
  CHECK((mid.values() - blend.values()).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("half-pixel flow averages neighbours") {
  TensorF key = TensorF::zeros({1, 1, 4});
  key.mutable_values() << 0.0f, 1.0f, 3.0f, 7.0f;
  TensorF m = TensorF::zeros({3, 1, 4});
  m.mutable_values().segment(0, 4).setConstant(0.5f);
  const TensorF out = warp(key, m);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(2.0));
  CHECK(out[2] == doctest::Approx(5.0));
  CHECK(out[3] == doctest::Approx(7.0));
}

TEST_CASE("warp stays finite for extreme flows") {
  Rng rng(6);
  const TensorF key = rng.uniform_tensor<float>({1, 3, 8, 8}, 0, 1);
  TensorF m = rng.uniform_tensor<float>({1, 3, 2, 8, 8}, -1e6, 1e6);
  m.set_requires_grad(true);
  TensorF out = warp(key, m);
  CHECK(out.values().allFinite());
  sum(out).backward();
  CHECK(m.grad().allFinite());
}

TEST_CASE("warp gradient check away from integer coordinates") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    TensorD flow = rng.uniform_tensor<double>({1, 2, 2, 7, 8}, -2, 2);
    // Fractional parts kept at least 0.25 px from an integer.
    for (Index i = 0; i < flow.size(); ++i) {
      double& v = flow.mutable_values()[i];
      v = std::floor(v) + 0.25 + 0.5 * (v - std::floor(v));
    }
    const TensorD lvl = rng.uniform_tensor<double>({1, 1, 2, 7, 8}, 0.1, 0.9);
    const TensorD key = rng.uniform_tensor<double>({1, 3, 7, 8}, 0, 1);
    auto fn = [](const std::vector<TensorD>& x) { return warp(x[0], x[1]); };
    const auto r = grad_check("warp", fn, {key, concat<double>({flow, lvl}, 1)}, seed, {"keyframe", "motion"},
                              GradCheckOptions{kGradCheckStep, 1000});
    CHECK(r.passed());
  }
}

TEST_CASE("fresh motion net predicts zero motion") {
  Rng rng(7);
  ParameterStore<float> store;
  const MotionNet<float> net(store, rng);
  CHECK(store.parameter_count(MotionNet<float>::kGroup) == 6 * 32 * 9 + 32 + 2 * (32 * 32 * 9 + 32) + 32 * 3 * 9 + 3);
  const TensorF video = rng.uniform_tensor<float>({2, 3, 4, 8, 8}, 0, 1);
  const TensorF m = net(video, reshape(slice(video, 2, 0, 1), {2, 3, 8, 8}));
  CHECK(m.shape() == video.shape());
  CHECK(m.values().isZero(0));
  const TensorF pair = net.forward_pair(rng.uniform_tensor<float>({3, 8, 8}, 0, 1), rng.uniform_tensor<float>({3, 8, 8}, 0, 1));
  CHECK(pair.shape() == Shape{3, 8, 8});
  CHECK(pair.values().isZero(0));
  CHECK_THROWS_AS(net.forward_pair(TensorF::zeros({3, 8, 8}), TensorF::zeros({3, 8, 9})), ValidationError);
  CHECK_THROWS_AS(net(video, TensorF::zeros({2, 3, 8, 9})), ValidationError);
}

TEST_CASE("motion warm-up with zero steps changes nothing") {
  Rng rng(8);
  ParameterStore<float> store;
  const MotionNet<float> net(store, rng);
  std::vector<TensorF::Vector> before;
  for (const auto& e : store.entries()) before.push_back(e.tensor.values());
  Rng data_rng(1);
  pretrain_motion(net, store, translate_clips(100, 2), 0, AdamConfig{1e-3}, data_rng);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(store.entries()[i].tensor.values() == before[i]);
  CHECK_THROWS_AS(pretrain_motion(net, store, {}, 1, AdamConfig{1e-3}, data_rng), ValidationError);
}

TEST_CASE("motion warm-up beats copying the keyframe") {
  const std::vector<TensorF> train = translate_clips(1000, 16);
  auto run = [&](ParameterStore<float>& store) {
    Rng init(9), data(10);
    auto net = std::make_unique<MotionNet<float>>(store, init);
    pretrain_motion(*net, store, train, 300, AdamConfig{1e-3}, data);
    return net;
  };
  ParameterStore<float> store, again;
  const auto net_ptr = run(store);
  run(again);
  for (std::size_t i = 0; i < store.entries().size(); ++i)
    CHECK(store.entries()[i].tensor.values() == again.entries()[i].tensor.values());
  const MotionNet<float>& net = *net_ptr;

  NoGradGuard guard;
  std::vector<TensorF> clips;
  for (std::uint64_t s = 0; s < 6; ++s) clips.push_back(gen_synthetic(5000 + s, 8, 32, 32, Regime::translate).video.frames);
  const TensorF heldout = stack_clips(clips);
  const double learned = warp_l1(net, heldout).item();
  const double baseline = copy_keyframe_l1(heldout);
  MESSAGE("held-out warp L1 " << learned << " vs keyframe copy " << baseline);
  CHECK(learned < baseline);
}
