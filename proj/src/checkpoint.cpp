#include "deco/checkpoint.hpp"

#include "deco/video_io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

namespace deco {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    uint<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char> take() { return std::move(out_); }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& in) : in_(in) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > in_.size()) throw FormatError(std::string("checkpoint: truncated ") + what, in_.size());
  }
  template <typename T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    need(n, what);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<char>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
  return it == arrays.end() ? nullptr : &*it;
}

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.uint<std::uint16_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(ckpt.global_step);
  w.uint<std::uint32_t>(ckpt.phase);
  w.str(ckpt.rng_state);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.counters.size()));
  for (const auto& [name, value] : ckpt.counters) {
    w.str(name);
    w.uint<std::uint64_t>(value);
  }
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    if (static_cast<Index>(a.data.size()) != shape_numel(a.shape))
      throw ValidationError("checkpoint: array " + a.name + " payload does not match " + shape_str(a.shape));
    w.str(a.name);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (Index e : a.shape) w.uint<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (float f : a.data) w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(f));
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw FormatError("checkpoint: bad magic", 0);
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.uint<std::uint8_t>("magic");
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  Checkpoint c;
  c.global_step = r.uint<std::uint64_t>("step");
  c.phase = r.uint<std::uint32_t>("phase");
  c.rng_state = r.str("rng state");
  const auto counters = r.uint<std::uint32_t>("counter count");
  for (std::uint32_t i = 0; i < counters; ++i) {
    std::string name = r.str("counter name");
    c.counters.emplace_back(std::move(name), r.uint<std::uint64_t>("counter value"));
  }
  const auto arrays = r.uint<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < arrays; ++i) {
    NamedArray a;
    a.name = r.str("array name");
    const auto rank = r.uint<std::uint32_t>("array rank");
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(static_cast<Index>(r.uint<std::uint32_t>("extent")));
    const auto n = static_cast<std::size_t>(shape_numel(a.shape));
    r.need(4 * n, "payload");
    a.data.resize(n);
    for (auto& f : a.data) f = std::bit_cast<float>(r.uint<std::uint32_t>("payload"));
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes", r.pos());
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeAbort("checkpoint: cannot write " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeAbort("checkpoint: cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace deco
