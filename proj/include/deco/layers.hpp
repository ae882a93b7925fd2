#pragma once

// Parameter registry and the small set of layers the networks are built from.

#include "deco/conv.hpp"
#include "deco/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace deco {

/// Named, shaped parameter arrays tagged with a freeze group.
///
/// Tensors are handles, so layers and the store share the same storage. A
/// parameter is trainable exactly when its tensor requires a gradient.
template <typename S>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor<S> tensor;
  };

  Tensor<S> add(const std::string& name, const std::string& group, Tensor<S> value) {
    if (find(name)) throw ValidationError("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    entries_.push_back({name, group, value});
    return value;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  const Entry* find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
  }

  std::vector<std::string> groups() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (std::find(out.begin(), out.end(), e.group) == out.end()) out.push_back(e.group);
    return out;
  }

  void set_group_trainable(const std::string& group, bool trainable) {
    for (auto& e : entries_)
      if (e.group == group) e.tensor.set_requires_grad(trainable);
  }

  void set_all_trainable(bool trainable) {
    for (auto& e : entries_) e.tensor.set_requires_grad(trainable);
  }

  Index parameter_count(const std::string& group = {}) const {
    Index n = 0;
    for (const auto& e : entries_)
      if (group.empty() || e.group == group) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

/// He-normal initialised 3-D convolution with optional bias.
template <typename S>
struct Conv3dLayer {
  Tensor<S> weight;
  Tensor<S> bias;
  Conv3dOptions options;

  Conv3dLayer() = default;

  Conv3dLayer(ParameterStore<S>& store, const std::string& name, const std::string& group, Index c_in, Index c_out,
              const Extent3& kernel, const Conv3dOptions& opt, Rng& rng, bool with_bias = true)
      : options(opt) {
    const Index fan_in = c_in * kernel[0] * kernel[1] * kernel[2];
    weight = store.add(name + ".weight", group,
                       rng.normal_tensor<S>({c_out, c_in, kernel[0], kernel[1], kernel[2]},
                                            std::sqrt(2.0 / static_cast<double>(fan_in))));
    if (with_bias) bias = store.add(name + ".bias", group, Tensor<S>::zeros({c_out}));
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv3d(x, weight, bias, options); }

  Index out_channels() const { return weight.dim(0); }
};

/// 3x3x3 same-size convolution options.
inline Conv3dOptions same3() { return {{1, 1, 1}, {1, 1, 1}}; }
/// 3x3x3 convolution halving the axes whose stride is 2.
inline Conv3dOptions strided3(const Extent3& stride) { return {stride, {1, 1, 1}}; }
/// Per-frame 3x3 spatial convolution.
inline Conv3dOptions frame3() { return {{1, 1, 1}, {0, 1, 1}}; }

inline constexpr Extent3 kKernel3{3, 3, 3};
inline constexpr Extent3 kFrameKernel3{1, 3, 3};

/// Pre-activation residual block: x + conv(lrelu(conv(lrelu(x)))).
template <typename S>
struct ResBlock {
  Conv3dLayer<S> first;
  Conv3dLayer<S> second;

  ResBlock() = default;
  ResBlock(ParameterStore<S>& store, const std::string& name, const std::string& group, Index channels, Rng& rng)
      : first(store, name + ".conv1", group, channels, channels, kKernel3, same3(), rng),
        second(store, name + ".conv2", group, channels, channels, kKernel3, same3(), rng) {}

  Tensor<S> operator()(const Tensor<S>& x) const {
    return add(x, second(leaky_relu(first(leaky_relu(x)))));
  }
};

}  // namespace deco
