#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "evdepth/events.hpp"
#include "evdepth/geometry.hpp"

namespace evdepth {

// --- images ------------------------------------------------------------------

/// Decodes 8/16-bit gray or 8-bit colour PNG into a C x H x W float tensor in
/// [0, 1] (colour as RGB).
torch::Tensor read_image(const std::filesystem::path& path);

/// Gray frames are written as 16-bit PNG, colour frames as 8-bit RGB.
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

// --- samples -----------------------------------------------------------------

struct FrameTriplet {
  std::array<torch::Tensor, 3> frames;  // I_{k-1}, I_k, I_{k+1}; C x H x W
  std::array<double, 3> timestamps{};
  CameraIntrinsics intrinsics;

  const torch::Tensor& prev() const { return frames[0]; }
  const torch::Tensor& target() const { return frames[1]; }
  const torch::Tensor& next() const { return frames[2]; }

  void validate() const;
};

struct TrainingSample {
  int frame_index = 0;
  torch::Tensor voxel;  // B x H x W; window ends at triplet.timestamps[1]
  double window_end = 0.0;
  FrameTriplet triplet;
  /// Voxels of frames k-1 and k+1; only loaded for event-consistency training.
  std::optional<std::array<torch::Tensor, 2>> neighbor_voxels;
  /// Ground-truth depth (H x W) and its validity mask, when available.
  torch::Tensor gt_depth;
  torch::Tensor gt_valid;
  /// Ground-truth transforms k -> k-1 and k -> k+1, when available.
  std::optional<std::array<RigidTransform, 2>> gt_poses;

  void validate() const;
};

enum class Profile { kMvsecLike, kDsecLike, kNone };

std::string to_string(Profile p);
Profile profile_from_string(const std::string& s);

/// Pad (positive) or crop (negative) offsets that take an in_h x in_w image
/// to out_h x out_w.
struct Reframe {
  int in_height = 0, in_width = 0;
  int out_height = 0, out_width = 0;
  int top = 0, left = 0;

  /// Applies to the last two dims; new pixels are `fill`.
  torch::Tensor apply(const torch::Tensor& t, double fill = 0.0) const;
  CameraIntrinsics apply(const CameraIntrinsics& k) const;
};

/// mvsec-like: 260x346 -> 288x352 zero padding at bottom/right.
/// dsec-like: 480x640 -> 320x640 centre crop. none: identity (checks /32).
Reframe reframe_for(Profile p, int height, int width);

TrainingSample preprocess(const TrainingSample& sample, Profile profile);

struct AugmentRanges {
  std::array<double, 2> brightness{0.8, 1.2};
  std::array<double, 2> contrast{0.8, 1.2};
  std::array<double, 2> saturation{0.8, 1.2};
  std::array<double, 2> hue{0.9, 1.1};
  double flip_probability = 0.5;
  double color_probability = 0.5;
};

/// Horizontal flip of frames, voxels, depth and intrinsics; colour jitter of
/// frames only and only for the dsec-like profile.
TrainingSample augment(const TrainingSample& sample, std::mt19937_64& rng, Profile profile,
                       const AugmentRanges& ranges = {});

TrainingSample flip_sample(const TrainingSample& sample);

/// Brightness, contrast, saturation, hue applied in that order to every frame.
torch::Tensor color_jitter(const torch::Tensor& image, double brightness, double contrast,
                           double saturation, double hue);

/// Per-sample generator seeded from (seed, epoch, sample index).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

// --- sequences on disk -------------------------------------------------------

struct SampleOptions {
  VoxelOptions voxel;
  bool neighbor_voxels = false;
  bool depth = true;
};

/// One sequence directory in the canonical layout:
///   events.bin + events.json, frames/NNNNNN.png, timestamps.txt, calib.json,
///   optional depth/NNNNNN.bin (+ .json), poses.txt, exclude.txt.
class Sequence {
 public:
  static Sequence open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  std::size_t frame_count() const { return timestamps_.size(); }
  const std::vector<double>& timestamps() const { return timestamps_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  const EventStream& events() const { return events_; }
  bool has_depth() const { return has_depth_; }
  bool has_poses() const { return !poses_.empty(); }

  /// Centre frames 1..N-2 that are not listed in exclude.txt.
  const std::vector<int>& indices() const { return indices_; }

  torch::Tensor frame(int k) const;
  /// Depth (H x W) and validity mask; invalid where depth <= 0 or non-finite.
  std::pair<torch::Tensor, torch::Tensor> depth(int k) const;
  /// Camera-to-world pose of frame k.
  const RigidTransform& pose(int k) const;
  /// Transform mapping points of camera `from` into camera `to`.
  RigidTransform relative_pose(int from, int to) const;

  EventWindow window(int k, double window_s) const;
  VoxelGrid voxel(int k, const VoxelOptions& opts) const;

  /// Sample for training index `index` (into indices()).
  TrainingSample sample(std::size_t index, const SampleOptions& opts = {}) const;
  /// Sample centred on frame k (1 <= k <= N-2), regardless of exclusions.
  TrainingSample sample_at_frame(int k, const SampleOptions& opts = {}) const;

 private:
  std::filesystem::path dir_;
  std::vector<double> timestamps_;
  CameraIntrinsics intrinsics_;
  EventStream events_;
  bool has_depth_ = false;
  std::vector<RigidTransform> poses_;
  std::vector<int> indices_;
};

TrainingSample load_sample(const std::filesystem::path& root, std::size_t index,
                           const SampleOptions& opts = {});

/// Frames whose window holds fewer than `min_events` events.
std::vector<int> static_frames(const Sequence& seq, double window_s, std::size_t min_events);

/// One float64 seconds value per line; '#' lines skipped.
std::vector<double> read_timestamps(const std::filesystem::path& path);

/// B x H x W float copy of a voxel grid.
torch::Tensor voxel_tensor(const VoxelGrid& grid);

std::filesystem::path frame_path(const std::filesystem::path& dir, int k);
std::filesystem::path depth_path(const std::filesystem::path& dir, int k);

/// Resolves a dataset root to its training/validation/test sequence
/// directories: either the root itself is a sequence, or it holds
/// train/ val/ test/ subdirectories.
struct DatasetSplits {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> val;
  std::vector<std::filesystem::path> test;

  static DatasetSplits resolve(const std::filesystem::path& root);
};

// --- simulator -----------------------------------------------------------------

enum class SceneGeometry { kPlane, kBox };

struct SceneConfig {
  std::uint64_t seed = 1;
  int width = 96;
  int height = 64;
  double fx = 80.0;
  double fy = 80.0;
  double cx = 47.5;
  double cy = 31.5;
  int channels = 1;

  SceneGeometry geometry = SceneGeometry::kPlane;
  double plane_distance = 3.0;   // along the optical axis at the image centre
  double plane_tilt_deg = 40.0;  // rotation about the camera x axis
  std::array<double, 3> box_half_extent{3.0, 2.0, 6.0};

  std::array<double, 3> velocity{1.5, 0.0, 0.0};          // world units / s
  std::array<double, 3> angular_velocity{0.0, 0.0, 0.0};  // rad / s, body frame

  double frame_rate = 20.0;
  int num_frames = 30;
  int val_frames = 0;
  int test_frames = 0;

  double contrast_threshold = 0.2;
  int supersampling = 10;  // render steps per frame interval
  double log_eps = 1e-3;

  int texture_waves = 24;
  double texture_min_wavelength = 0.5;  // world units
  double texture_max_wavelength = 2.5;
  double texture_amplitude = 0.4;

  std::size_t exclude_below_events = 0;
  double exclusion_window_s = 0.05;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
  CameraIntrinsics intrinsics() const;
};

/// Renders the scene along its trajectory and writes the canonical layout.
/// With val_frames/test_frames > 0 the output root holds train/ val/ test/
/// sequences that continue the same trajectory; otherwise `out` is itself a
/// sequence. Returns a short summary (event counts, warnings).
nlohmann::json synth_scene(const SceneConfig& cfg, const std::filesystem::path& out);

/// Analytic renderer used by synth_scene, exposed for tests.
class SceneRenderer {
 public:
  explicit SceneRenderer(const SceneConfig& cfg);

  /// Camera-to-world pose at time t.
  RigidTransform pose_at(double t) const;
  /// Intensity image (C x H x W) and depth (H x W) seen from `pose`.
  std::pair<torch::Tensor, torch::Tensor> render(const RigidTransform& pose) const;
  /// Solid texture value for channel c at world point p.
  double texture(const Eigen::Vector3d& p, int c) const;

 private:
  SceneConfig cfg_;
  struct Wave {
    Eigen::Vector3d k;
    double phase;
    double amplitude;
  };
  std::vector<Wave> waves_;
  std::vector<std::pair<Eigen::Vector3d, double>> planes_;  // n . X = d
};

}  // namespace evdepth
