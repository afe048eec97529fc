#pragma once

#include <array>
#include <filesystem>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace evdepth {

/// Pinhole intrinsics in pixels for an image of `width` x `height`.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;

  /// Intrinsics after resizing the image to new_width x new_height.
  CameraIntrinsics scaled(int new_width, int new_height) const;

  /// Intrinsics after adding `left`/`top` columns/rows (negative values crop)
  /// and setting the new image size.
  CameraIntrinsics shifted(int left, int top, int new_width, int new_height) const;

  /// Intrinsics of the horizontally mirrored image (x -> W-1-x).
  CameraIntrinsics flipped() const;

  Eigen::Matrix3d matrix() const;
  torch::Tensor tensor(torch::TensorOptions options = torch::kFloat) const;

  nlohmann::json to_json() const;
  static CameraIntrinsics from_json(const nlohmann::json& j);
  static CameraIntrinsics load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid motion X' = R X + t. Maps points expressed in a source camera frame
/// into a destination camera frame.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  Eigen::Matrix4d matrix() const;
  torch::Tensor tensor(torch::TensorOptions options = torch::kFloat) const;

  RigidTransform inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& point) const;

  /// Orthonormality and det(R) = +1 within `tol`.
  bool is_valid(double tol = 1e-5) const;

  /// Conjugation by the x-mirror S = diag(-1, 1, 1): the same motion seen in a
  /// horizontally flipped image.
  RigidTransform mirrored_x() const;

  /// Applies `rhs` first, then `*this`.
  friend RigidTransform operator*(const RigidTransform& lhs, const RigidTransform& rhs);

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Axis-angle (r) + translation (t) 6-vector. `invert` returns (R^T, -R^T t).
RigidTransform pose_vector_to_transform(const std::array<double, 6>& v, bool invert = false);

// --- differentiable tensor ops (batched, N leading) -------------------------

/// Rodrigues on an N x 6 tensor; returns N x 4 x 4. Small rotations use the
/// series expansion so gradients stay finite at zero.
torch::Tensor pose_vectors_to_matrices(const torch::Tensor& pose, bool invert);

/// D = 1 / (a sigma + b), a = 1/d_min - 1/d_max, b = 1/d_max. Rejects sigma
/// outside [0, 1].
torch::Tensor disparity_to_depth(const torch::Tensor& sigma, double d_min, double d_max);

/// Inverse of disparity_to_depth.
torch::Tensor depth_to_disparity(const torch::Tensor& depth, double d_min, double d_max);

/// N x H x W x 2 pixel coordinates (x, y) of the identity grid.
torch::Tensor pixel_grid(std::int64_t n, std::int64_t height, std::int64_t width,
                         torch::TensorOptions options);

struct Reprojection {
  torch::Tensor coords;  // N x H x W x 2, (x, y) in source-image pixels
  torch::Tensor valid;   // N x 1 x H x W bool, projected depth > 0
};

/// depth: N x 1 x H x W; transform: N x 4 x 4 (target -> source);
/// intrinsics: N x 3 x 3.
Reprojection reproject_pixels(const torch::Tensor& depth, const torch::Tensor& transform,
                              const torch::Tensor& intrinsics);

struct Sampled {
  torch::Tensor image;      // N x C x H x W
  torch::Tensor in_bounds;  // N x 1 x H x W bool
};

/// Bilinear lookup of `image` at `coords` (N x H x W x 2, pixel units) with
/// border clamping. Differentiable in both arguments.
Sampled bilinear_sample(const torch::Tensor& image, const torch::Tensor& coords);

struct Warped {
  torch::Tensor image;  // synthesized target view
  torch::Tensor valid;  // in front of the camera and inside the source frame
};

Warped inverse_warp(const torch::Tensor& source, const torch::Tensor& depth,
                    const torch::Tensor& transform, const torch::Tensor& intrinsics);

}  // namespace evdepth
