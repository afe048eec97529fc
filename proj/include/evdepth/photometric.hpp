#pragma once

#include <vector>

#include <torch/torch.h>

namespace evdepth {

struct PhotometricConfig {
  double alpha = 0.85;    // SSIM / L1 mixing weight
  int ssim_window = 3;    // odd box-filter size
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  int scales = 4;
  /// Edge-aware disparity smoothness weight. Zero keeps the loss to the masked
  /// consistency term only.
  double smoothness_weight = 0.0;

  void validate() const;
};

struct LossBreakdown {
  torch::Tensor total;            // scalar, differentiable
  std::vector<double> per_scale;  // detached per-scale values
  double mask_fraction = 0.0;     // mean of the non-static mask over scales
};

/// Per-pixel SSIM over a `window` x `window` box with reflect padding,
/// averaged over channels. a, b: N x C x H x W. Returns N x 1 x H x W.
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b,
                   const PhotometricConfig& cfg = {});

/// alpha/2 (1 - SSIM) + (1 - alpha) |a - b|, channel-averaged. N x 1 x H x W.
torch::Tensor photometric_error(const torch::Tensor& target, const torch::Tensor& synthesized,
                                const PhotometricConfig& cfg = {});

struct MinReprojection {
  torch::Tensor loss;    // elementwise minimum
  torch::Tensor argmin;  // int64, 0 = previous source, 1 = next source
};

/// Ties resolve to the previous source.
MinReprojection min_reprojection(const torch::Tensor& pe_prev, const torch::Tensor& pe_next);

/// 1 where the warped error is strictly lower than the identity error.
torch::Tensor auto_mask(const torch::Tensor& warped_min, const torch::Tensor& identity_min);

/// Everything the loss needs besides the disparities. Frames are
/// N x C x H x W, transforms N x 4 x 4 (target -> source), intrinsics
/// N x 3 x 3 at full resolution.
struct LossInputs {
  torch::Tensor prev;
  torch::Tensor target;
  torch::Tensor next;
  torch::Tensor to_prev;
  torch::Tensor to_next;
  torch::Tensor intrinsics;
  double d_min = 0.1;
  double d_max = 100.0;
};

/// Multi-scale masked minimum-reprojection loss. Each disparity map
/// (N x 1 x h_j x w_j) is bilinearly upsampled to full resolution, converted
/// to depth and used to warp both sources.
LossBreakdown total_loss(const std::vector<torch::Tensor>& disparities, const LossInputs& in,
                         const PhotometricConfig& cfg = {});

/// Edge-aware first-order smoothness of mean-normalised disparity.
torch::Tensor smoothness_loss(const torch::Tensor& disparity, const torch::Tensor& image);

}  // namespace evdepth
