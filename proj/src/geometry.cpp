#include "evdepth/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "evdepth/array_io.hpp"
#include "evdepth/error.hpp"

namespace evdepth {

// --- CameraIntrinsics --------------------------------------------------------

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCategory::kConfig, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCategory::kConfig, "intrinsics need a positive image size");
  }
}

CameraIntrinsics CameraIntrinsics::scaled(int new_width, int new_height) const {
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
}

CameraIntrinsics CameraIntrinsics::shifted(int left, int top, int new_width,
                                           int new_height) const {
  return {fx, fy, cx + left, cy + top, new_width, new_height};
}

CameraIntrinsics CameraIntrinsics::flipped() const {
  return {fx, fy, width - 1 - cx, cy, width, height};
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

torch::Tensor CameraIntrinsics::tensor(torch::TensorOptions options) const {
  return torch::tensor({fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0},
                       torch::TensorOptions().dtype(torch::kDouble))
      .view({3, 3})
      .to(options);
}

nlohmann::json CameraIntrinsics::to_json() const {
  return {{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}, {"width", width}, {"height", height}};
}

CameraIntrinsics CameraIntrinsics::from_json(const nlohmann::json& j) {
  CameraIntrinsics k;
  try {
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kFormat, std::string("intrinsics: ") + e.what());
  }
  k.validate();
  return k;
}

CameraIntrinsics CameraIntrinsics::load(const std::filesystem::path& path) {
  return from_json(read_json(path));
}

void CameraIntrinsics::save(const std::filesystem::path& path) const {
  atomic_write(path, to_json().dump(2) + "\n");
}

// --- RigidTransform ----------------------------------------------------------

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation,
                               const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

torch::Tensor RigidTransform::tensor(torch::TensorOptions options) const {
  const Eigen::Matrix4d m = matrix();
  auto out = torch::empty({4, 4}, torch::TensorOptions().dtype(torch::kDouble));
  auto acc = out.accessor<double, 2>();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) acc[r][c] = m(r, c);
  return out.to(options);
}

RigidTransform RigidTransform::inverse() const {
  const Eigen::Matrix3d rt = rotation_.transpose();
  return {rt, -rt * translation_};
}

Eigen::Vector3d RigidTransform::apply(const Eigen::Vector3d& point) const {
  return rotation_ * point + translation_;
}

bool RigidTransform::is_valid(double tol) const {
  const double ortho = (rotation_.transpose() * rotation_ - Eigen::Matrix3d::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol &&
         translation_.allFinite();
}

RigidTransform RigidTransform::mirrored_x() const {
  const Eigen::Matrix3d s = Eigen::Vector3d(-1, 1, 1).asDiagonal();
  return {s * rotation_ * s, s * translation_};
}

RigidTransform operator*(const RigidTransform& lhs, const RigidTransform& rhs) {
  return {lhs.rotation_ * rhs.rotation_, lhs.rotation_ * rhs.translation_ + lhs.translation_};
}

namespace {

constexpr double kSmallAngleSq = 1e-8;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

}  // namespace

RigidTransform pose_vector_to_transform(const std::array<double, 6>& v, bool invert) {
  const Eigen::Vector3d r(v[0], v[1], v[2]);
  const Eigen::Vector3d t(v[3], v[4], v[5]);
  const double theta_sq = r.squaredNorm();
  double a, b;
  if (theta_sq > kSmallAngleSq) {
    const double theta = std::sqrt(theta_sq);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta_sq;
  } else {
    a = 1.0 - theta_sq / 6.0;
    b = 0.5 - theta_sq / 24.0;
  }
  const Eigen::Matrix3d k = skew(r);
  const Eigen::Matrix3d rot = Eigen::Matrix3d::Identity() + a * k + b * k * k;
  RigidTransform out(rot, t);
  return invert ? out.inverse() : out;
}

// --- tensor ops --------------------------------------------------------------

torch::Tensor pose_vectors_to_matrices(const torch::Tensor& pose, bool invert) {
  TORCH_CHECK(pose.dim() == 2 && pose.size(1) == 6, "pose vectors must be N x 6");
  const auto n = pose.size(0);
  auto r = pose.slice(1, 0, 3);
  auto t = pose.slice(1, 3, 6).unsqueeze(-1);  // N x 3 x 1

  auto theta_sq = (r * r).sum(1, /*keepdim=*/true).unsqueeze(-1);  // N x 1 x 1
  auto large = theta_sq > kSmallAngleSq;
  auto safe_sq = torch::where(large, theta_sq, torch::ones_like(theta_sq));
  auto theta = torch::sqrt(safe_sq);
  auto a = torch::where(large, torch::sin(theta) / theta, 1.0 - theta_sq / 6.0);
  auto b = torch::where(large, (1.0 - torch::cos(theta)) / safe_sq, 0.5 - theta_sq / 24.0);

  auto zero = torch::zeros({n}, pose.options());
  auto rx = r.select(1, 0), ry = r.select(1, 1), rz = r.select(1, 2);
  auto k = torch::stack({zero, -rz, ry, rz, zero, -rx, -ry, rx, zero}, 1).view({n, 3, 3});
  auto eye = torch::eye(3, pose.options()).expand({n, 3, 3});
  auto rot = eye + a * k + b * torch::bmm(k, k);

  if (invert) {
    rot = rot.transpose(1, 2);
    t = -torch::bmm(rot, t);
  }
  auto top = torch::cat({rot, t}, 2);  // N x 3 x 4
  auto bottom = torch::tensor({0.0, 0.0, 0.0, 1.0}, pose.options()).view({1, 1, 4}).expand({n, 1, 4});
  return torch::cat({top, bottom}, 1);
}

torch::Tensor disparity_to_depth(const torch::Tensor& sigma, double d_min, double d_max) {
  if (!(d_min > 0.0) || !(d_max > d_min)) {
    throw Error(ErrorCategory::kConfig, "depth range must satisfy 0 < d_min < d_max");
  }
  {
    torch::NoGradGuard guard;
    if (!torch::isfinite(sigma).all().item<bool>()) {
      throw Error(ErrorCategory::kNumeric, "non-finite disparity");
    }
    if (sigma.numel() > 0 && (sigma.min().item<double>() < 0.0 || sigma.max().item<double>() > 1.0)) {
      throw Error(ErrorCategory::kRange, "disparity outside [0, 1]");
    }
  }
  const double b = 1.0 / d_max;
  const double a = 1.0 / d_min - b;
  return 1.0 / (a * sigma + b);
}

torch::Tensor depth_to_disparity(const torch::Tensor& depth, double d_min, double d_max) {
  const double b = 1.0 / d_max;
  const double a = 1.0 / d_min - b;
  return (1.0 / depth - b) / a;
}

torch::Tensor pixel_grid(std::int64_t n, std::int64_t height, std::int64_t width,
                         torch::TensorOptions options) {
  auto ys = torch::arange(height, options);
  auto xs = torch::arange(width, options);
  auto mesh = torch::meshgrid({ys, xs}, "ij");
  auto grid = torch::stack({mesh[1], mesh[0]}, -1);  // H x W x 2
  return grid.unsqueeze(0).expand({n, height, width, 2});
}

Reprojection reproject_pixels(const torch::Tensor& depth, const torch::Tensor& transform,
                              const torch::Tensor& intrinsics) {
  TORCH_CHECK(depth.dim() == 4 && depth.size(1) == 1, "depth must be N x 1 x H x W");
  const auto n = depth.size(0), h = depth.size(2), w = depth.size(3);
  if (transform.sizes() != torch::IntArrayRef({n, 4, 4})) {
    throw Error(ErrorCategory::kShape, "transform batch does not match depth");
  }
  if (intrinsics.sizes() != torch::IntArrayRef({n, 3, 3})) {
    throw Error(ErrorCategory::kShape, "intrinsics batch does not match depth");
  }
  const auto opts = depth.options();

  auto grid = pixel_grid(1, h, w, opts).reshape({h * w, 2});
  auto homog = torch::cat({grid, torch::ones({h * w, 1}, opts)}, 1).t();  // 3 x HW
  auto rays = torch::matmul(torch::linalg_inv(intrinsics), homog);         // N x 3 x HW
  auto points = rays * depth.reshape({n, 1, h * w});

  auto rot = transform.slice(1, 0, 3).slice(2, 0, 3);
  auto trans = transform.slice(1, 0, 3).slice(2, 3, 4);
  auto moved = torch::bmm(rot, points) + trans;
  auto proj = torch::bmm(intrinsics, moved);  // N x 3 x HW

  auto z = proj.select(1, 2);
  auto valid = z > 1e-6;
  auto z_safe = torch::where(valid, z, torch::ones_like(z));
  auto x = proj.select(1, 0) / z_safe;
  auto y = proj.select(1, 1) / z_safe;

  Reprojection out;
  out.coords = torch::stack({x, y}, -1).view({n, h, w, 2});
  out.valid = valid.view({n, 1, h, w});
  return out;
}

Sampled bilinear_sample(const torch::Tensor& image, const torch::Tensor& coords) {
  TORCH_CHECK(image.dim() == 4, "image must be N x C x H x W");
  const auto n = image.size(0), c = image.size(1), h = image.size(2), w = image.size(3);
  if (coords.dim() != 4 || coords.size(0) != n || coords.size(3) != 2) {
    throw Error(ErrorCategory::kShape, "sample grid must be N x Ho x Wo x 2");
  }
  const auto ho = coords.size(1), wo = coords.size(2);

  auto finite = torch::isfinite(coords).all(-1);
  auto safe = torch::where(finite.unsqueeze(-1), coords, torch::zeros_like(coords));
  auto x = safe.select(-1, 0);
  auto y = safe.select(-1, 1);

  constexpr double tol = 1e-6;
  auto in_bounds = finite & (x >= -tol) & (x <= w - 1 + tol) & (y >= -tol) & (y <= h - 1 + tol);

  auto xc = x.clamp(0, w - 1);
  auto yc = y.clamp(0, h - 1);
  // top-left corner, kept one short of the last column/row so +1 stays inside
  auto x0 = xc.detach().floor().clamp(0, std::max<std::int64_t>(w - 2, 0));
  auto y0 = yc.detach().floor().clamp(0, std::max<std::int64_t>(h - 2, 0));
  auto wx = (xc - x0).unsqueeze(1);  // N x 1 x Ho x Wo
  auto wy = (yc - y0).unsqueeze(1);
  auto x0i = x0.to(torch::kLong);
  auto y0i = y0.to(torch::kLong);
  auto x1i = (x0i + 1).clamp_max(w - 1);
  auto y1i = (y0i + 1).clamp_max(h - 1);

  auto flat = image.reshape({n, c, h * w});
  auto gather = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
    auto idx = (yi * w + xi).view({n, 1, ho * wo}).expand({n, c, ho * wo});
    return flat.gather(2, idx).view({n, c, ho, wo});
  };
  auto v00 = gather(y0i, x0i);
  auto v01 = gather(y0i, x1i);
  auto v10 = gather(y1i, x0i);
  auto v11 = gather(y1i, x1i);

  Sampled out;
  out.image = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
  out.in_bounds = in_bounds.unsqueeze(1);
  return out;
}

Warped inverse_warp(const torch::Tensor& source, const torch::Tensor& depth,
                    const torch::Tensor& transform, const torch::Tensor& intrinsics) {
  if (source.dim() != 4 || depth.dim() != 4 || source.size(0) != depth.size(0) ||
      source.size(2) != depth.size(2) || source.size(3) != depth.size(3)) {
    throw Error(ErrorCategory::kShape, "source frame and depth map shapes differ");
  }
  auto rep = reproject_pixels(depth, transform, intrinsics);
  auto sampled = bilinear_sample(source, rep.coords);
  return {sampled.image, rep.valid & sampled.in_bounds};
}

}  // namespace evdepth
