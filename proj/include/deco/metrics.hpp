#pragma once

// Reconstruction metrics and latent statistics.

#include "deco/vae.hpp"

#include <string>
#include <vector>

namespace deco {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) after clamping `estimate` to [0, 1]; 100 dB when MSE is 0.
double psnr(const TensorF& estimate, const TensorF& reference);

struct SsimOptions {
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Mean SSIM of the luma planes over all frames of [3,T,H,W] or [N,3,T,H,W]
/// clips. Statistics use a Gaussian window over valid positions only.
double ssim(const TensorF& estimate, const TensorF& reference, const SsimOptions& opt = {});

/// ITU-R BT.601 luma of a [.., 3, T, H, W] clip, one plane per frame.
std::vector<Eigen::MatrixXd> luma_planes(const TensorF& clip);

struct ComponentStats {
  std::string component;
  double mean_sq_mu = 0.0;     // element-wise second moment of mu
  double cov_trace = 0.0;      // trace of the sample covariance of flattened mu
  Index dimension = 0;
};

/// `samples[i]` holds the flattened mu of sample i; at least two samples.
ComponentStats latent_stats(const std::string& component, const std::vector<Eigen::VectorXd>& samples);

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<ComponentStats> latents;

  /// Single-line JSON record.
  std::string to_json() const;
};

}  // namespace deco
