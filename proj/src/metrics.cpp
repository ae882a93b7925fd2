#include "deco/metrics.hpp"

#include <json.hpp>

#include <cmath>

namespace deco {

double psnr(const TensorF& estimate, const TensorF& reference) {
  if (estimate.shape() != reference.shape())
    throw ValidationError("psnr: shapes " + shape_str(estimate.shape()) + " and " + shape_str(reference.shape()) +
                          " differ");
  double sq = 0.0;
  for (Index i = 0; i < estimate.size(); ++i) {
    const double d = std::clamp(static_cast<double>(estimate[i]), 0.0, 1.0) - reference[i];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(estimate.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<Eigen::MatrixXd> luma_planes(const TensorF& clip) {
  const int base = clip.rank() - 4;
  if (base < 0 || base > 1 || clip.dim(base) != 3)
    throw ValidationError("luma_planes: expected [3,T,H,W] or [N,3,T,H,W], got " + shape_str(clip.shape()));
  const Index N = base ? clip.dim(0) : 1;
  const Index T = clip.dim(base + 1), H = clip.dim(base + 2), W = clip.dim(base + 3);
  const Index plane = H * W;
  std::vector<Eigen::MatrixXd> out;
  for (Index n = 0; n < N; ++n)
    for (Index t = 0; t < T; ++t) {
      Eigen::MatrixXd y(H, W);
      const float* r = clip.data() + ((n * 3 + 0) * T + t) * plane;
      const float* g = clip.data() + ((n * 3 + 1) * T + t) * plane;
      const float* b = clip.data() + ((n * 3 + 2) * T + t) * plane;
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) {
          const Index k = i * W + j;
          y(i, j) = 0.299 * std::clamp<double>(r[k], 0, 1) + 0.587 * std::clamp<double>(g[k], 0, 1) +
                    0.114 * std::clamp<double>(b[k], 0, 1);
        }
      out.push_back(std::move(y));
    }
  return out;
}

namespace {

// Separable valid-mode Gaussian filtering of a plane.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& x, const Eigen::VectorXd& taps) {
  const Index k = taps.size();
  const Index H = x.rows() - k + 1, W = x.cols() - k + 1;
  Eigen::MatrixXd rows(x.rows(), W);
  for (Index j = 0; j < W; ++j) rows.col(j) = x.middleCols(j, k) * taps;
  Eigen::MatrixXd out(H, W);
  for (Index i = 0; i < H; ++i) out.row(i) = taps.transpose() * rows.middleRows(i, k);
  return out;
}

}  // namespace

double ssim(const TensorF& estimate, const TensorF& reference, const SsimOptions& opt) {
  if (estimate.shape() != reference.shape())
    throw ValidationError("ssim: shapes " + shape_str(estimate.shape()) + " and " + shape_str(reference.shape()) +
                          " differ");
  const auto xs = luma_planes(estimate);
  const auto ys = luma_planes(reference);
  if (xs.front().rows() < opt.window || xs.front().cols() < opt.window)
    throw ValidationError("ssim: frame smaller than the " + std::to_string(opt.window) + "-pixel window");

  Eigen::VectorXd taps(opt.window);
  const double half = static_cast<double>(opt.window - 1) / 2.0;
  for (Index i = 0; i < opt.window; ++i) taps[i] = std::exp(-(i - half) * (i - half) / (2.0 * opt.sigma * opt.sigma));
  taps /= taps.sum();
  const double c1 = std::pow(opt.k1 * opt.range, 2), c2 = std::pow(opt.k2 * opt.range, 2);

  double total = 0.0;
  for (std::size_t f = 0; f < xs.size(); ++f) {
    const auto& x = xs[f];
    const auto& y = ys[f];
    const Eigen::ArrayXXd mx = filter_valid(x, taps).array(), my = filter_valid(y, taps).array();
    const Eigen::ArrayXXd sxx = filter_valid(x.cwiseProduct(x), taps).array() - mx * mx;
    const Eigen::ArrayXXd syy = filter_valid(y.cwiseProduct(y), taps).array() - my * my;
    const Eigen::ArrayXXd sxy = filter_valid(x.cwiseProduct(y), taps).array() - mx * my;
    const Eigen::ArrayXXd map =
        ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += map.mean();
  }
  return total / static_cast<double>(xs.size());
}

ComponentStats latent_stats(const std::string& component, const std::vector<Eigen::VectorXd>& samples) {
  if (samples.size() < 2) throw ValidationError("latent_stats: need at least 2 samples");
  const Index d = samples.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  double second = 0.0;
  for (const auto& s : samples) {
    if (s.size() != d) throw ValidationError("latent_stats: samples differ in size");
    mean += s;
    second += s.squaredNorm();
  }
  const auto n = static_cast<double>(samples.size());
  mean /= n;
  double trace = 0.0;
  for (const auto& s : samples) trace += (s - mean).squaredNorm();
  return {component, second / (n * static_cast<double>(d)), trace / (n - 1.0), d};
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["psnr"] = psnr;
  j["ssim"] = ssim;
  if (!latents.empty()) {
    nlohmann::ordered_json lat;
    for (const auto& c : latents)
      lat[c.component] = {{"mean_sq_mu", c.mean_sq_mu}, {"cov_trace", c.cov_trace}, {"dim", c.dimension}};
    j["latent"] = lat;
  }
  return j.dump();
}

}  // namespace deco
