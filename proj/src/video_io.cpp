#include "deco/video_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

namespace deco {
namespace {

void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void save_video(const VideoTensor& video, const std::filesystem::path& path) {
  const TensorF& f = video.frames;
  if (f.rank() != 4 || f.dim(0) != 3) throw ValidationError("save_video: frames must be [3,T,H,W], got " + shape_str(f.shape()));
  const Index T = f.dim(1), H = f.dim(2), W = f.dim(3);
  for (Index e : {T, H, W})
    if (e > static_cast<Index>(UINT32_MAX)) throw ValidationError("save_video: extent does not fit u32");

  std::vector<char> bytes(kVideoMagic.begin(), kVideoMagic.end());
  put_u16(bytes, kVideoVersion);
  put_u32(bytes, static_cast<std::uint32_t>(T));
  put_u32(bytes, static_cast<std::uint32_t>(H));
  put_u32(bytes, static_cast<std::uint32_t>(W));
  bytes.reserve(bytes.size() + static_cast<std::size_t>(f.size()) * 4);
  const Index plane = H * W;
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < plane; ++i) {
        const float v = f[(c * T + t) * plane + i];
        if (std::isnan(v)) throw ValidationError("save_video: NaN sample");
        put_u32(bytes, std::bit_cast<std::uint32_t>(std::clamp(v, 0.0f, 1.0f)));
      }

  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeAbort("save_video: cannot write " + path.string());
}

VideoTensor load_video(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeAbort("load_video: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::uint64_t size = bytes.size();

  if (size < 4) throw FormatError("load_video: truncated magic in " + path.string(), size);
  for (std::size_t i = 0; i < 4; ++i)
    if (bytes[i] != static_cast<unsigned char>(kVideoMagic[i]))
      throw FormatError("load_video: bad magic in " + path.string(), i);
  if (size < kVideoHeaderBytes) throw FormatError("load_video: truncated header in " + path.string(), size);
  const auto version = static_cast<std::uint16_t>(bytes[4] | bytes[5] << 8);
  if (version != kVideoVersion)
    throw FormatError("load_video: unsupported version " + std::to_string(version), 4);
  const std::uint64_t T = get_u32(&bytes[6]), H = get_u32(&bytes[10]), W = get_u32(&bytes[14]);
  if (T == 0 || H == 0 || W == 0) throw FormatError("load_video: zero extent in header", 6);
  const std::uint64_t expected = kVideoHeaderBytes + T * 3 * H * W * 4;
  if (size < expected)
    throw FormatError("load_video: payload truncated, header needs " + std::to_string(expected) + " bytes", size);
  if (size > expected) throw FormatError("load_video: trailing bytes after payload", expected);

  const auto t_ = static_cast<Index>(T), h_ = static_cast<Index>(H), w_ = static_cast<Index>(W);
  const Index plane = h_ * w_;
  TensorF::Vector v(3 * t_ * plane);
  const unsigned char* p = bytes.data() + kVideoHeaderBytes;
  for (Index t = 0; t < t_; ++t)
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < plane; ++i, p += 4) {
        const float x = std::bit_cast<float>(get_u32(p));
        if (!(x >= 0.0f && x <= 1.0f))
          throw FormatError("load_video: sample outside [0, 1]", static_cast<std::uint64_t>(p - bytes.data()));
        v[(c * t_ + t) * plane + i] = x;
      }
  return {TensorF({3, t_, h_, w_}, std::move(v))};
}

std::uint8_t ppm_byte(float value, PpmMapping mapping) {
  double v = value;
  if (mapping == PpmMapping::signed_gray) v = 0.5 + v / 2.0;
  if (!(v > 0.0)) v = 0.0;  // also maps NaN to black
  if (v > 1.0) v = 1.0;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void dump_ppm(const TensorF& frames, const std::filesystem::path& dir, PpmMapping mapping, const std::string& prefix) {
  if (frames.rank() != 4 || frames.dim(0) != 3)
    throw ValidationError("dump_ppm: expected [3,T,H,W], got " + shape_str(frames.shape()));
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeAbort("dump_ppm: cannot create " + dir.string() + ": " + ec.message());
  const Index T = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  const Index plane = H * W;
  for (Index t = 0; t < T; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "_%04lld.ppm", static_cast<long long>(t));
    const auto path = dir / (prefix + name);
    std::string bytes = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (Index i = 0; i < plane; ++i)
      for (Index c = 0; c < 3; ++c) bytes.push_back(static_cast<char>(ppm_byte(frames[(c * T + t) * plane + i], mapping)));
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeAbort("dump_ppm: cannot write " + path.string());
  }
}

}  // namespace deco
