#include "deco/motion.hpp"
#include "deco/rng.hpp"
#include "deco/video_io.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

using namespace deco;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "deco_test_video_io";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::uint64_t load_offset(const fs::path& p) {
  try {
    load_video(p);
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("load_video accepted a malformed file");
  return 0;
}

}  // namespace

TEST_CASE("DCVR round trip is bitwise lossless") {
  Rng rng(1);
  const TensorF frames = rng.uniform_tensor<float>({3, 4, 8, 8}, 0, 1);
  const fs::path p = scratch("round.dcvr");
  save_video({frames}, p);
  const VideoTensor back = load_video(p);
  REQUIRE(back.frames.shape() == frames.shape());
  CHECK(std::memcmp(back.frames.data(), frames.data(), sizeof(float) * static_cast<std::size_t>(frames.size())) == 0);
  CHECK(back.frame_count() == 4);
  // Saving the loaded clip again gives identical bytes.
  const fs::path q = scratch("round2.dcvr");
  save_video(back, q);
  CHECK(read_bytes(p) == read_bytes(q));
}

TEST_CASE("DCVR header and frame-major layout") {
  TensorF frames = TensorF::zeros({3, 2, 1, 2});
  for (Index i = 0; i < frames.size(); ++i) frames.mutable_values()[i] = static_cast<float>(i) / 16.0f;
  const fs::path p = scratch("layout.dcvr");
  save_video({frames}, p);
  const auto b = read_bytes(p);
  REQUIRE(b.size() == kVideoHeaderBytes + 12 * 4);
  CHECK(std::string(b.begin(), b.begin() + 4) == "DCVR");
  CHECK(b[4] == 1);
  CHECK(b[5] == 0);
  CHECK(b[6] == 2);   // T
  CHECK(b[10] == 1);  // H
  CHECK(b[14] == 2);  // W
  // First payload samples: frame 0, channel 0, then channel 1 of frame 0.
  auto sample = [&](std::size_t k) {
    float f;
    std::memcpy(&f, b.data() + kVideoHeaderBytes + 4 * k, 4);
    return f;
  };
  CHECK(sample(0) == frames[0]);
  CHECK(sample(1) == frames[1]);
  CHECK(sample(2) == frames[4]);   // c=1, t=0
  CHECK(sample(6) == frames[2]);   // t=1, c=0
}

TEST_CASE("DCVR rejects bad magic with the byte offset") {
  const fs::path p = scratch("magic.dcvr");
  save_video({TensorF::zeros({3, 1, 2, 2})}, p);
  auto b = read_bytes(p);
  std::copy_n("XXXX", 4, b.begin());
  write_bytes(p, b);
  CHECK(load_offset(p) == 0);
  b[0] = 'D';
  b[1] = 'C';
  b[2] = 'Q';
  write_bytes(p, b);
  CHECK(load_offset(p) == 2);
}

TEST_CASE("DCVR rejects a truncated payload at the computed offset") {
  const fs::path p = scratch("trunc.dcvr");
  save_video({TensorF::zeros({3, 2, 4, 4})}, p);
  auto b = read_bytes(p);
  b.resize(b.size() - 5);
  write_bytes(p, b);
  CHECK(load_offset(p) == b.size());

  // Header claims more frames than the payload holds.
  save_video({TensorF::zeros({3, 2, 4, 4})}, p);
  b = read_bytes(p);
  b[6] = 3;
  write_bytes(p, b);
  CHECK(load_offset(p) == b.size());

  // Trailing bytes are reported where the payload should have ended.
  b[6] = 1;
  write_bytes(p, b);
  CHECK(load_offset(p) == kVideoHeaderBytes + 3 * 16 * 4);
}

TEST_CASE("DCVR value range contract") {
  const fs::path p = scratch("range.dcvr");
  TensorF frames = TensorF::constant({3, 1, 2, 2}, 0.25f);
  frames.mutable_values()[3] = 1.5f;
  frames.mutable_values()[4] = -0.5f;
  save_video({frames}, p);
  const VideoTensor back = load_video(p);
  CHECK(back.frames[3] == 1.0f);
  CHECK(back.frames[4] == 0.0f);

  auto b = read_bytes(p);
  const float bad = 2.0f;
  std::memcpy(b.data() + kVideoHeaderBytes + 8, &bad, 4);
  write_bytes(p, b);
  CHECK(load_offset(p) == kVideoHeaderBytes + 8);
}

TEST_CASE("PPM byte mapping") {
  CHECK(ppm_byte(0.0f, PpmMapping::unsigned_unit) == 0);
  CHECK(ppm_byte(1.0f, PpmMapping::unsigned_unit) == 255);
  CHECK(ppm_byte(2.0f, PpmMapping::unsigned_unit) == 255);
  CHECK(ppm_byte(-1.0f, PpmMapping::unsigned_unit) == 0);
  CHECK(ppm_byte(0.5f, PpmMapping::unsigned_unit) == 128);  // 127.5 rounds half away from zero
  CHECK(ppm_byte(0.0f, PpmMapping::signed_gray) == 128);
  CHECK(ppm_byte(-1.0f, PpmMapping::signed_gray) == 0);
  CHECK(ppm_byte(1.0f, PpmMapping::signed_gray) == 255);
}

TEST_CASE("dump_ppm writes one P6 file per frame") {
  const fs::path dir = scratch("ppm");
  fs::remove_all(dir);
  TensorF frames = TensorF::zeros({3, 2, 2, 3});
  frames.mutable_values().segment(6, 6).setOnes();  // channel 0, frame 1
  dump_ppm(frames, dir, PpmMapping::unsigned_unit, "f");
  REQUIRE(fs::exists(dir / "f_0000.ppm"));
  REQUIRE(fs::exists(dir / "f_0001.ppm"));
  CHECK_FALSE(fs::exists(dir / "f_0002.ppm"));
  const auto b0 = read_bytes(dir / "f_0000.ppm");
  const std::string header = "P6\n3 2\n255\n";
  REQUIRE(b0.size() == header.size() + 18);
  CHECK(std::string(b0.begin(), b0.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
  for (std::size_t i = header.size(); i < b0.size(); ++i) CHECK(b0[i] == 0);
  const auto b1 = read_bytes(dir / "f_0001.ppm");
  // Interleaved RGB: red is full, green and blue are zero.
  CHECK(static_cast<unsigned char>(b1[header.size()]) == 255);
  CHECK(b1[header.size() + 1] == 0);
  CHECK(b1[header.size() + 2] == 0);
}

TEST_CASE("synthetic clips are deterministic per seed") {
  for (Regime r : {Regime::translate, Regime::multi_object, Regime::scale_change}) {
    const auto a = gen_synthetic(9, 4, 16, 16, r);
    const auto b = gen_synthetic(9, 4, 16, 16, r);
    const auto c = gen_synthetic(10, 4, 16, 16, r);
    CHECK(a.video.frames.values() == b.video.frames.values());
    CHECK(a.true_flow.values() == b.true_flow.values());
    CHECK(a.video.frames.values() != c.video.frames.values());
    CHECK(a.video.frames.values().minCoeff() >= 0.0f);
    CHECK(a.video.frames.values().maxCoeff() <= 1.0f);
  }
}

TEST_CASE("synthetic generator rejects bad arguments") {
  CHECK_THROWS_AS(gen_synthetic(1, 1, 16, 16, Regime::translate), ValidationError);
  CHECK_THROWS_AS(gen_synthetic(1, 4, 8, 16, Regime::translate), ValidationError);
  CHECK_THROWS_AS(parse_regime("spiral"), ValidationError);
  CHECK(parse_regime("multi-object") == Regime::multi_object);
  CHECK(regime_name(Regime::scale_change) == "scale-change");
}

TEST_CASE("forced translation gives constant flow over the shape") {
  SyntheticOptions opt;
  opt.flow_per_frame = std::array<int, 2>{1, 0};
  const auto s = gen_synthetic(4, 4, 32, 32, Regime::translate, opt);
  const Index T = 4, HW = 32 * 32;
  for (Index t = 0; t < T; ++t) {
    Index support = 0;
    for (Index i = 0; i < HW; ++i) {
      const float fx = s.true_flow[(0 * T + t) * HW + i], fy = s.true_flow[(1 * T + t) * HW + i];
      if (fx != 0.0f || fy != 0.0f) {
        ++support;
        CHECK(fx == static_cast<float>(t));
        CHECK(fy == 0.0f);
      }
    }
    if (t > 0) CHECK(support > 0);
  }
}

TEST_CASE("cumulative displacement stays within a quarter of the frame") {
  for (Regime r : {Regime::translate, Regime::multi_object, Regime::scale_change})
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = gen_synthetic(seed, 8, 32, 32, r);
      const Index n = 8 * 32 * 32;
      for (Index i = 0; i < n; ++i) {
        if (s.valid[i] == 0.0f) continue;
        CHECK(std::hypot(s.true_flow[i], s.true_flow[n + i]) <= 32.0 / 4.0 + 1e-6);
      }
    }
}

TEST_CASE("ground-truth flow reproduces every frame through the warp on valid pixels") {
  for (Regime r : {Regime::translate, Regime::multi_object, Regime::scale_change})
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      const Index T = 4, H = 24, W = 32;
      const auto s = gen_synthetic(seed, T, H, W, r);
      const TensorF video = reshape(s.video.frames, {1, 3, T, H, W});
      const TensorF flow = reshape(s.true_flow, {1, 2, T, H, W});
      const TensorF motion = concat<float>({flow, TensorF::zeros({1, 1, T, H, W})}, 1);
      const TensorF keyframe = reshape(slice(s.video.frames, 1, 0, 1), {1, 3, H, W});
      const TensorF predicted = warp(keyframe, motion);
      double worst = 0.0;
      Index valid = 0;
      for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < T * H * W; ++i) {
          if (s.valid[i] == 0.0f) continue;
          ++valid;
          worst = std::max<double>(worst, std::abs(predicted[c * T * H * W + i] - video[c * T * H * W + i]));
        }
      INFO("regime " << regime_name(r) << " seed " << seed);
      CHECK(worst <= 1e-5);
      CHECK(valid > 3 * T * H * W / 2);
    }
}
