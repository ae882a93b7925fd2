#pragma once

// Adam with bias correction, per-parameter lazy state, and global-norm clipping.

#include "deco/layers.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace deco {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// First/second moments and update count for one parameter.
struct AdamMoments {
  TensorF::Vector m;
  TensorF::Vector v;
  std::uint64_t steps = 0;
};

/// Optimizer state keyed by parameter name. Moments are created on a
/// parameter's first update, so a group unfrozen later starts fresh.
struct OptimizerState {
  AdamConfig config;
  std::map<std::string, AdamMoments> moments;
};

/// Scales all gradients of the listed entries so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
template <typename Entries>
double clip_grad_norm(Entries& entries, double max_norm) {
  double sq = 0.0;
  for (auto& e : entries)
    if (e.tensor.requires_grad() && e.tensor.has_grad()) sq += e.tensor.grad().template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto& e : entries)
      if (e.tensor.requires_grad() && e.tensor.has_grad()) {
        auto& g = e.tensor.node()->grad;
        g *= static_cast<float>(factor);
      }
  }
  return norm;
}

/// One Adam update on every store entry whose group is not frozen.
///
/// Entries that do not require a gradient, or whose group is in `frozen`,
/// are skipped entirely: values and moments stay bitwise unchanged. Entries
/// without an accumulated gradient are updated with a zero gradient.
inline void adam_step(ParameterStore<float>& params, OptimizerState& state, const std::set<std::string>& frozen = {},
                      const std::set<std::string>& only_groups = {}) {
  const auto& cfg = state.config;
  for (const auto& e : params.entries()) {
    if (frozen.count(e.group) || !e.tensor.requires_grad()) continue;
    if (!only_groups.empty() && !only_groups.count(e.group)) continue;
    const TensorF::Vector g = e.tensor.grad();
    if (!g.allFinite()) throw RuntimeAbort("adam_step: non-finite gradient in " + e.name);
    auto& mom = state.moments[e.name];
    if (mom.steps == 0) {
      mom.m = TensorF::Vector::Zero(g.size());
      mom.v = TensorF::Vector::Zero(g.size());
    }
    ++mom.steps;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(mom.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(mom.steps));
    TensorF tensor = e.tensor;
    auto& x = tensor.mutable_values();
    for (Index i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double m = b1 * mom.m[i] + (1.0 - b1) * gi;
      const double v = b2 * mom.v[i] + (1.0 - b2) * gi * gi;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double update = cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      x[i] = static_cast<float>(x[i] - update);
    }
  }
}

}  // namespace deco
