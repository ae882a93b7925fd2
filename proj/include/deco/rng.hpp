#pragma once

#include "deco/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace deco {

/// Seeded generator whose full state round-trips through a string.
///
/// Sampling avoids std distributions: their hidden caches are not part of the
/// engine state and would break checkpoint resumption.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  /// Standard normal via Box-Muller; one variate per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename S>
  Tensor<S> normal_tensor(const Shape& shape, double stddev = 1.0) {
    typename Tensor<S>::Vector v(shape_numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(stddev * normal());
    return Tensor<S>(shape, std::move(v));
  }

  template <typename S>
  Tensor<S> uniform_tensor(const Shape& shape, double lo, double hi) {
    typename Tensor<S>::Vector v(shape_numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(uniform(lo, hi));
    return Tensor<S>(shape, std::move(v));
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw RuntimeAbort("corrupt rng state");
  }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace deco
