#pragma once

// Raw video container ("DCVR"), PPM frame dumps and synthetic clips.

#include "deco/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace deco {

/// Frames as a [3, T, H, W] tensor with values in [0, 1]. save_video clamps;
/// load_video rejects samples outside the range.
struct VideoTensor {
  TensorF frames;

  Index frame_count() const { return frames.dim(1); }
  Index height() const { return frames.dim(2); }
  Index width() const { return frames.dim(3); }
};

/// Container load failure at a byte offset.
class FormatError : public RuntimeAbort {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : RuntimeAbort(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// magic "DCVR", u16 version, u32 T, H, W, then T*3*H*W little-endian f32,
// frame-major and channel-planar within a frame.
inline constexpr std::array<char, 4> kVideoMagic{'D', 'C', 'V', 'R'};
inline constexpr std::uint16_t kVideoVersion = 1;
inline constexpr std::uint64_t kVideoHeaderBytes = 4 + 2 + 3 * 4;

void save_video(const VideoTensor& video, const std::filesystem::path& path);
VideoTensor load_video(const std::filesystem::path& path);

/// Byte mapping for PPM dumps.
enum class PpmMapping {
  unsigned_unit,  // v in [0,1] -> round(255 v)
  signed_gray,    // v in [-1,1] -> round(255 (0.5 + v/2)), zero at mid-gray
};

std::uint8_t ppm_byte(float value, PpmMapping mapping);

/// Writes one binary P6 file per frame of a [3, T, H, W] tensor:
/// `<dir>/<prefix>_0000.ppm`, ... Creates `dir` if needed.
void dump_ppm(const TensorF& frames, const std::filesystem::path& dir, PpmMapping mapping = PpmMapping::unsigned_unit,
              const std::string& prefix = "frame");

enum class Regime { translate, multi_object, scale_change };

Regime parse_regime(std::string_view name);
std::string_view regime_name(Regime regime);

struct SyntheticOptions {
  // Forces the (x, y) per-frame sampling offset of every shape (translate only).
  std::optional<std::array<int, 2>> flow_per_frame;
};

/// A clip plus its ground-truth backward flow.
///
/// For every pixel p of frame t: frame_t(p) = frame_0(p + true_flow_t(p))
/// wherever `valid` is 1. Invalid pixels are disocclusions and content whose
/// source lies outside frame 0.
struct SyntheticSample {
  VideoTensor video;
  TensorF true_flow;  // [2, T, H, W], pixels
  TensorF valid;      // [T, H, W], 0 or 1
};

SyntheticSample gen_synthetic(std::uint64_t seed, Index frames, Index height, Index width, Regime regime,
                              const SyntheticOptions& options = {});

}  // namespace deco
