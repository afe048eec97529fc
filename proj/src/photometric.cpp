#include "evdepth/photometric.hpp"

#include <string>

#include "evdepth/error.hpp"
#include "evdepth/geometry.hpp"

namespace evdepth {

namespace F = torch::nn::functional;

void PhotometricConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCategory::kConfig, "alpha must lie in [0, 1]");
  }
  if (ssim_window < 1 || ssim_window % 2 == 0) {
    throw Error(ErrorCategory::kConfig, "SSIM window must be a positive odd size");
  }
  if (!(c1 > 0.0) || !(c2 > 0.0)) {
    throw Error(ErrorCategory::kConfig, "SSIM constants must be positive");
  }
  if (scales < 1) throw Error(ErrorCategory::kConfig, "need at least one scale");
  if (smoothness_weight < 0.0) {
    throw Error(ErrorCategory::kConfig, "smoothness weight must be non-negative");
  }
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw Error(ErrorCategory::kShape, std::string(what) + ": shape mismatch");
  }
}

torch::Tensor box_filter(const torch::Tensor& x, int window) {
  const int pad = window / 2;
  auto padded = pad > 0 ? F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect))
                        : x;
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(window).stride(1));
}

}  // namespace

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const PhotometricConfig& cfg) {
  require_same_shape(a, b, "ssim");
  TORCH_CHECK(a.dim() == 4, "ssim expects N x C x H x W");
  const int win = cfg.ssim_window;
  auto mu_a = box_filter(a, win);
  auto mu_b = box_filter(b, win);
  auto var_a = box_filter(a * a, win) - mu_a * mu_a;
  auto var_b = box_filter(b * b, win) - mu_b * mu_b;
  auto cov = box_filter(a * b, win) - mu_a * mu_b;

  auto num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2);
  auto den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2);
  return (num / den).mean(1, /*keepdim=*/true);
}

torch::Tensor photometric_error(const torch::Tensor& target, const torch::Tensor& synthesized,
                                const PhotometricConfig& cfg) {
  require_same_shape(target, synthesized, "photometric_error");
  auto l1 = (target - synthesized).abs().mean(1, /*keepdim=*/true);
  if (cfg.alpha == 0.0) return l1;
  auto structural = (1.0 - ssim(target, synthesized, cfg)).clamp_min(0.0);
  return cfg.alpha / 2.0 * structural + (1.0 - cfg.alpha) * l1;
}

MinReprojection min_reprojection(const torch::Tensor& pe_prev, const torch::Tensor& pe_next) {
  require_same_shape(pe_prev, pe_next, "min_reprojection");
  auto next_wins = pe_next < pe_prev;
  return {torch::where(next_wins, pe_next, pe_prev), next_wins.to(torch::kLong)};
}

torch::Tensor auto_mask(const torch::Tensor& warped_min, const torch::Tensor& identity_min) {
  require_same_shape(warped_min, identity_min, "auto_mask");
  return (warped_min < identity_min).to(warped_min.scalar_type());
}

torch::Tensor smoothness_loss(const torch::Tensor& disparity, const torch::Tensor& image) {
  auto norm = disparity / (disparity.mean({2, 3}, true) + 1e-7);
  auto grad_dx = (norm.slice(3, 0, -1) - norm.slice(3, 1)).abs();
  auto grad_dy = (norm.slice(2, 0, -1) - norm.slice(2, 1)).abs();
  auto img_dx = (image.slice(3, 0, -1) - image.slice(3, 1)).abs().mean(1, true);
  auto img_dy = (image.slice(2, 0, -1) - image.slice(2, 1)).abs().mean(1, true);
  return (grad_dx * torch::exp(-img_dx)).mean() + (grad_dy * torch::exp(-img_dy)).mean();
}

LossBreakdown total_loss(const std::vector<torch::Tensor>& disparities, const LossInputs& in,
                         const PhotometricConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(disparities.size()) != cfg.scales) {
    throw Error(ErrorCategory::kShape, "expected " + std::to_string(cfg.scales) +
                                           " disparity scales, got " +
                                           std::to_string(disparities.size()));
  }
  require_same_shape(in.prev, in.target, "total_loss frames");
  require_same_shape(in.next, in.target, "total_loss frames");
  const auto h = in.target.size(2), w = in.target.size(3);

  // identity errors do not depend on the prediction
  auto identity_min = torch::min(photometric_error(in.target, in.prev, cfg),
                                 photometric_error(in.target, in.next, cfg));

  LossBreakdown out;
  torch::Tensor sum;
  double mask_sum = 0.0;
  for (int j = 0; j < cfg.scales; ++j) {
    auto disp = disparities[static_cast<std::size_t>(j)];
    if (disp.dim() != 4 || disp.size(1) != 1 || disp.size(0) != in.target.size(0)) {
      throw Error(ErrorCategory::kShape,
                  "disparity scale " + std::to_string(j) + " must be N x 1 x h x w");
    }
    if (disp.size(2) != h || disp.size(3) != w) {
      disp = F::interpolate(disp, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{h, w})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
    }
    auto depth = disparity_to_depth(disp, in.d_min, in.d_max);
    auto warped_prev = inverse_warp(in.prev, depth, in.to_prev, in.intrinsics);
    auto warped_next = inverse_warp(in.next, depth, in.to_next, in.intrinsics);

    auto reprojection = min_reprojection(photometric_error(in.target, warped_prev.image, cfg),
                                         photometric_error(in.target, warped_next.image, cfg));
    auto mask = auto_mask(reprojection.loss.detach(), identity_min);
    auto term = (mask * reprojection.loss).mean();
    if (cfg.smoothness_weight > 0.0) {
      term = term + cfg.smoothness_weight / (1 << j) *
                        smoothness_loss(disparities[static_cast<std::size_t>(j)],
                                        F::interpolate(in.target,
                                                       F::InterpolateFuncOptions()
                                                           .size(std::vector<int64_t>{
                                                               disparities[j].size(2),
                                                               disparities[j].size(3)})
                                                           .mode(torch::kArea)));
    }
    out.per_scale.push_back(term.item<double>());
    mask_sum += mask.mean().item<double>();
    sum = j == 0 ? term : sum + term;
  }
  out.total = sum / cfg.scales;
  out.mask_fraction = mask_sum / cfg.scales;
  return out;
}

}  // namespace evdepth
