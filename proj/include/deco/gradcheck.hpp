#pragma once

// Finite-difference verification of analytic gradients.
//
// Runs in the 64-bit shadow mode: every op is instantiated on double, probed
// with central differences of step 1e-5 and accepted at relative error 1e-4.
// The op output is contracted with a fixed random weighting so every output
// element contributes to the checked scalar.

#include "deco/ops.hpp"
#include "deco/rng.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace deco {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> parameters;

  bool passed(double tolerance = kGradCheckTolerance) const {
    for (const auto& p : parameters)
      if (!p.finite) return false;
    return max_rel_error < tolerance;
  }
};

struct GradCheckOptions {
  double step = kGradCheckStep;
  // Elements probed per input; all of them when the input is smaller.
  Index max_probes = 48;
};

using GradCheckFn = std::function<TensorD(const std::vector<TensorD>&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Checks `op` at the given inputs; `names` labels each input in the report.
inline GradCheckReport grad_check(const std::string& op_name, const GradCheckFn& op, std::vector<TensorD> inputs,
                                  std::uint64_t seed, const std::vector<std::string>& names = {},
                                  const GradCheckOptions& opt = {}) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& x : inputs) x.set_requires_grad(true);

  TensorD probe_weights;
  auto objective = [&](const std::vector<TensorD>& xs) {
    TensorD y = op(xs);
    if (!probe_weights.defined()) probe_weights = rng.uniform_tensor<double>(y.shape(), 0.5, 1.5);
    return sum(mul(y, probe_weights));
  };

  TensorD loss = objective(inputs);
  loss.backward();

  GradCheckReport report{op_name, 0.0, {}};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradCheckEntry entry{k < names.size() ? names[k] : "input" + std::to_string(k), 0.0, true};
    const TensorD::Vector analytic = inputs[k].grad();
    if (!analytic.allFinite()) entry.finite = false;

    std::vector<Index> probes;
    const Index n = inputs[k].size();
    if (n <= opt.max_probes) {
      for (Index i = 0; i < n; ++i) probes.push_back(i);
    } else {
      for (Index i = 0; i < opt.max_probes; ++i) probes.push_back(rng.uniform_int(0, n - 1));
    }

    NoGradGuard no_grad;
    for (Index i : probes) {
      auto& values = inputs[k].mutable_values();
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double plus = objective(inputs).item();
      values[i] = saved - opt.step;
      const double minus = objective(inputs).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      if (!std::isfinite(numeric)) entry.finite = false;
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.parameters.push_back(entry);
  }
  return report;
}

/// Same, with inputs drawn uniformly from [-1, 1].
inline GradCheckReport grad_check(const std::string& op_name, const GradCheckFn& op,
                                  const std::vector<Shape>& shapes, std::uint64_t seed,
                                  const GradCheckOptions& opt = {}) {
  Rng rng(seed);
  std::vector<TensorD> inputs;
  for (const auto& s : shapes) inputs.push_back(rng.uniform_tensor<double>(s, -1.0, 1.0));
  return grad_check(op_name, op, std::move(inputs), seed, {}, opt);
}

}  // namespace deco
