#pragma once

// "DCPT" checkpoint container.
//
// Layout, all integers little-endian:
//   magic "DCPT", u16 version (1), u64 global step, u32 phase,
//   u32 length + bytes of the rng state,
//   u32 counter count, then per counter: u32 name length, name, u64 value,
//   u32 array count, then per array: u32 name length, name, u32 rank,
//   u32 extents[rank], f32 payload.

#include "deco/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace deco {

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'C', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint64_t global_step = 0;
  std::uint32_t phase = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, std::uint64_t>> counters;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace deco
