#include "evdepth/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "evdepth/array_io.hpp"
#include "evdepth/error.hpp"

namespace evdepth {

namespace fs = std::filesystem;

// --- images ------------------------------------------------------------------

torch::Tensor read_image(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCategory::kIo, "missing image " + path.string());
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw Error(ErrorCategory::kFormat, "cannot decode " + path.string());
  double scale = 1.0;
  switch (img.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw Error(ErrorCategory::kFormat, path.string() + ": unsupported bit depth");
  }
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
  if (img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  cv::Mat f;
  img.convertTo(f, CV_MAKETYPE(CV_32F, img.channels()), scale);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, f.channels()}, torch::kFloat).clone();
  return t.permute({2, 0, 1}).contiguous();
}

void write_image(const fs::path& path, const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 3, "image must be C x H x W");
  const auto c = image.size(0);
  auto hwc = image.detach().to(torch::kFloat).clamp(0, 1).permute({1, 2, 0}).contiguous();
  cv::Mat f(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)),
            CV_MAKETYPE(CV_32F, static_cast<int>(c)), hwc.data_ptr<float>());
  cv::Mat out;
  if (c == 1) {
    f.convertTo(out, CV_16UC1, 65535.0);
  } else if (c == 3) {
    f.convertTo(out, CV_8UC3, 255.0);
    cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  } else {
    throw Error(ErrorCategory::kShape, "frames must have 1 or 3 channels");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) {
    throw Error(ErrorCategory::kIo, "cannot write " + path.string());
  }
}

// --- samples -----------------------------------------------------------------

void FrameTriplet::validate() const {
  for (const auto& f : frames) {
    if (!f.defined() || f.dim() != 3 || (f.size(0) != 1 && f.size(0) != 3)) {
      throw Error(ErrorCategory::kShape, "frames must be C x H x W with C in {1, 3}");
    }
    if (f.sizes() != frames[1].sizes()) {
      throw Error(ErrorCategory::kShape, "triplet frames differ in shape");
    }
  }
  if (!(timestamps[0] < timestamps[1] && timestamps[1] < timestamps[2])) {
    throw Error(ErrorCategory::kFormat, "triplet timestamps not strictly increasing");
  }
}

void TrainingSample::validate() const {
  triplet.validate();
  if (!voxel.defined() || voxel.dim() != 3) {
    throw Error(ErrorCategory::kShape, "voxel must be B x H x W");
  }
  if (voxel.size(1) != triplet.target().size(1) || voxel.size(2) != triplet.target().size(2)) {
    throw Error(ErrorCategory::kShape, "voxel and frame sizes differ");
  }
  if (window_end != triplet.timestamps[1]) {
    throw Error(ErrorCategory::kFormat, "voxel window does not end at the centre frame");
  }
}

std::string to_string(Profile p) {
  switch (p) {
    case Profile::kMvsecLike: return "mvsec-like";
    case Profile::kDsecLike: return "dsec-like";
    case Profile::kNone: return "none";
  }
  return "none";
}

Profile profile_from_string(const std::string& s) {
  if (s == "mvsec-like") return Profile::kMvsecLike;
  if (s == "dsec-like") return Profile::kDsecLike;
  if (s == "none") return Profile::kNone;
  throw Error(ErrorCategory::kConfig, "unknown profile '" + s + "'");
}

torch::Tensor Reframe::apply(const torch::Tensor& t, double fill) const {
  const auto d = t.dim();
  if (t.size(d - 2) != in_height || t.size(d - 1) != in_width) {
    throw Error(ErrorCategory::kShape, "reframe input size mismatch");
  }
  auto sizes = t.sizes().vec();
  sizes[d - 2] = out_height;
  sizes[d - 1] = out_width;
  auto out = torch::full(sizes, fill, t.options());
  const int y0 = std::max(0, -top), y1 = std::min(in_height, out_height - top);
  const int x0 = std::max(0, -left), x1 = std::min(in_width, out_width - left);
  if (y1 > y0 && x1 > x0) {
    out.narrow(d - 2, y0 + top, y1 - y0)
        .narrow(d - 1, x0 + left, x1 - x0)
        .copy_(t.narrow(d - 2, y0, y1 - y0).narrow(d - 1, x0, x1 - x0));
  }
  return out;
}

CameraIntrinsics Reframe::apply(const CameraIntrinsics& k) const {
  return k.shifted(left, top, out_width, out_height);
}

Reframe reframe_for(Profile p, int height, int width) {
  Reframe r{height, width, height, width, 0, 0};
  switch (p) {
    case Profile::kMvsecLike:
      if (height != 260 || width != 346) {
        throw Error(ErrorCategory::kShape, "mvsec-like profile expects 260x346 input, got " +
                                               std::to_string(height) + "x" +
                                               std::to_string(width));
      }
      r.out_height = 288;
      r.out_width = 352;
      break;
    case Profile::kDsecLike:
      if (height != 480 || width != 640) {
        throw Error(ErrorCategory::kShape, "dsec-like profile expects 480x640 input, got " +
                                               std::to_string(height) + "x" +
                                               std::to_string(width));
      }
      r.out_height = 320;
      r.top = -(480 - 320) / 2;
      break;
    case Profile::kNone:
      if (height % 32 != 0 || width % 32 != 0) {
        throw Error(ErrorCategory::kShape, "input " + std::to_string(height) + "x" +
                                               std::to_string(width) +
                                               " is not divisible by 32");
      }
      break;
  }
  return r;
}

TrainingSample preprocess(const TrainingSample& sample, Profile profile) {
  const auto& target = sample.triplet.target();
  const Reframe r = reframe_for(profile, static_cast<int>(target.size(1)),
                                static_cast<int>(target.size(2)));
  TrainingSample out = sample;
  for (auto& f : out.triplet.frames) f = r.apply(f);
  out.triplet.intrinsics = r.apply(sample.triplet.intrinsics);
  out.voxel = r.apply(sample.voxel);
  if (sample.neighbor_voxels) {
    out.neighbor_voxels = {r.apply((*sample.neighbor_voxels)[0]),
                           r.apply((*sample.neighbor_voxels)[1])};
  }
  if (sample.gt_depth.defined()) {
    out.gt_depth = r.apply(sample.gt_depth);
    out.gt_valid = r.apply(sample.gt_valid.to(torch::kFloat)).to(torch::kBool);
  }
  return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

TrainingSample flip_sample(const TrainingSample& sample) {
  TrainingSample out = sample;
  const auto flip = [](const torch::Tensor& t) { return t.flip({t.dim() - 1}); };
  for (auto& f : out.triplet.frames) f = flip(f);
  out.triplet.intrinsics = sample.triplet.intrinsics.flipped();
  out.voxel = flip(sample.voxel);
  if (sample.neighbor_voxels) {
    out.neighbor_voxels = {flip((*sample.neighbor_voxels)[0]), flip((*sample.neighbor_voxels)[1])};
  }
  if (sample.gt_depth.defined()) {
    out.gt_depth = flip(sample.gt_depth);
    out.gt_valid = flip(sample.gt_valid);
  }
  if (sample.gt_poses) {
    out.gt_poses = {(*sample.gt_poses)[0].mirrored_x(), (*sample.gt_poses)[1].mirrored_x()};
  }
  return out;
}

namespace {

torch::Tensor luminance(const torch::Tensor& rgb) {
  return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
}

void shift_hue(torch::Tensor& rgb, double shift) {
  auto acc = rgb.accessor<float, 3>();
  const auto h = rgb.size(1), w = rgb.size(2);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double r = acc[0][y][x], g = acc[1][y][x], b = acc[2][y][x];
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double delta = mx - mn;
      if (delta <= 0.0) continue;  // achromatic
      double hue;
      if (mx == r) hue = std::fmod((g - b) / delta, 6.0);
      else if (mx == g) hue = (b - r) / delta + 2.0;
      else hue = (r - g) / delta + 4.0;
      hue = hue / 6.0 + shift;
      hue -= std::floor(hue);
      const double s = delta / mx, v = mx;
      const double h6 = hue * 6.0;
      const int sector = static_cast<int>(h6) % 6;
      const double f = h6 - std::floor(h6);
      const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
      double o[3];
      switch (sector) {
        case 0: o[0] = v; o[1] = t; o[2] = p; break;
        case 1: o[0] = q; o[1] = v; o[2] = p; break;
        case 2: o[0] = p; o[1] = v; o[2] = t; break;
        case 3: o[0] = p; o[1] = q; o[2] = v; break;
        case 4: o[0] = t; o[1] = p; o[2] = v; break;
        default: o[0] = v; o[1] = p; o[2] = q; break;
      }
      for (int c = 0; c < 3; ++c) acc[c][y][x] = static_cast<float>(o[c]);
    }
  }
}

}  // namespace

torch::Tensor color_jitter(const torch::Tensor& image, double brightness, double contrast,
                           double saturation, double hue) {
  auto img = (image * brightness).clamp(0, 1);
  const bool rgb = img.size(0) == 3;
  auto mean = rgb ? luminance(img).mean() : img.mean();
  img = (contrast * img + (1 - contrast) * mean).clamp(0, 1);
  if (rgb) {
    auto gray = luminance(img).unsqueeze(0);
    img = (saturation * img + (1 - saturation) * gray).clamp(0, 1).contiguous();
    shift_hue(img, hue - 1.0);
  }
  return img;
}

TrainingSample augment(const TrainingSample& sample, std::mt19937_64& rng, Profile profile,
                       const AugmentRanges& ranges) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](const std::array<double, 2>& r) {
    return std::uniform_real_distribution<double>(r[0], r[1])(rng);
  };
  TrainingSample out = unit(rng) < ranges.flip_probability ? flip_sample(sample) : sample;
  const bool jitter = unit(rng) < ranges.color_probability;
  if (jitter && profile == Profile::kDsecLike) {
    const double b = uniform(ranges.brightness);
    const double c = uniform(ranges.contrast);
    const double s = uniform(ranges.saturation);
    const double h = uniform(ranges.hue);
    for (auto& f : out.triplet.frames) f = color_jitter(f, b, c, s, h);
  }
  return out;
}

// --- sequences ---------------------------------------------------------------

fs::path frame_path(const fs::path& dir, int k) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.png", k);
  return dir / "frames" / name;
}

fs::path depth_path(const fs::path& dir, int k) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.bin", k);
  return dir / "depth" / name;
}

std::vector<double> read_timestamps(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::kIo, "missing " + path.string());
  std::vector<double> ts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    try {
      ts.push_back(std::stod(line));
    } catch (const std::logic_error&) {
      throw Error(ErrorCategory::kFormat, path.string() + ": bad timestamp '" + line + "'");
    }
  }
  return ts;
}

torch::Tensor voxel_tensor(const VoxelGrid& g) {
  return torch::from_blob(const_cast<float*>(g.data.data()), {g.bins, g.height, g.width},
                          torch::kFloat)
      .clone();
}

namespace {

std::vector<int> read_index_list(const fs::path& path) {
  std::vector<int> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(std::stoi(line));
    } catch (const std::logic_error&) {
      throw Error(ErrorCategory::kFormat, path.string() + ": bad index '" + line + "'");
    }
  }
  return out;
}

std::vector<RigidTransform> read_poses(const fs::path& path) {
  std::vector<RigidTransform> poses;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Eigen::Matrix3d r;
    Eigen::Vector3d t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) ss >> r(i, j);
    ss >> t.x() >> t.y() >> t.z();
    if (!ss) throw Error(ErrorCategory::kFormat, path.string() + ": expected 12 numbers per line");
    poses.emplace_back(r, t);
  }
  return poses;
}

}  // namespace

Sequence Sequence::open(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCategory::kIo, "no sequence at " + dir.string());
  Sequence seq;
  seq.dir_ = dir;
  seq.timestamps_ = read_timestamps(dir / "timestamps.txt");
  for (std::size_t i = 1; i < seq.timestamps_.size(); ++i) {
    if (!(seq.timestamps_[i] > seq.timestamps_[i - 1])) {
      throw Error(ErrorCategory::kFormat, dir.string() + ": timestamps not strictly increasing");
    }
  }
  if (!fs::exists(dir / "calib.json")) {
    throw Error(ErrorCategory::kIo, "missing " + (dir / "calib.json").string());
  }
  seq.intrinsics_ = CameraIntrinsics::load(dir / "calib.json");
  const fs::path events = fs::exists(dir / "events.bin") ? dir / "events.bin" : dir / "events.csv";
  if (!fs::exists(events)) throw Error(ErrorCategory::kIo, "missing events in " + dir.string());
  seq.events_ = read_event_file(events);
  if (seq.events_.height != seq.intrinsics_.height || seq.events_.width != seq.intrinsics_.width) {
    throw Error(ErrorCategory::kShape, dir.string() + ": event sensor size differs from calib.json");
  }
  seq.has_depth_ = fs::exists(depth_path(dir, 0));
  if (fs::exists(dir / "poses.txt")) {
    seq.poses_ = read_poses(dir / "poses.txt");
    if (seq.poses_.size() != seq.timestamps_.size()) {
      throw Error(ErrorCategory::kFormat, dir.string() + ": poses.txt / timestamps.txt length mismatch");
    }
  }
  std::vector<int> excluded;
  if (fs::exists(dir / "exclude.txt")) excluded = read_index_list(dir / "exclude.txt");
  for (int k = 1; k + 1 < static_cast<int>(seq.timestamps_.size()); ++k) {
    if (std::find(excluded.begin(), excluded.end(), k) == excluded.end()) {
      seq.indices_.push_back(k);
    }
  }
  return seq;
}

torch::Tensor Sequence::frame(int k) const {
  auto img = read_image(frame_path(dir_, k));
  if (img.size(1) != intrinsics_.height || img.size(2) != intrinsics_.width) {
    throw Error(ErrorCategory::kShape, frame_path(dir_, k).string() + ": frame size differs from calib.json");
  }
  return img;
}

std::pair<torch::Tensor, torch::Tensor> Sequence::depth(int k) const {
  const auto arr = read_float_array(depth_path(dir_, k));
  if (arr.shape != std::vector<std::int64_t>{intrinsics_.height, intrinsics_.width}) {
    throw Error(ErrorCategory::kShape, depth_path(dir_, k).string() + ": unexpected depth shape");
  }
  auto d = torch::from_blob(const_cast<float*>(arr.data.data()), {intrinsics_.height, intrinsics_.width},
                            torch::kFloat)
               .clone();
  auto valid = torch::isfinite(d) & (d > 0);
  d = torch::where(valid, d, torch::zeros_like(d));
  return {d, valid};
}

const RigidTransform& Sequence::pose(int k) const {
  if (poses_.empty()) throw Error(ErrorCategory::kIo, dir_.string() + " has no poses.txt");
  return poses_.at(static_cast<std::size_t>(k));
}

RigidTransform Sequence::relative_pose(int from, int to) const {
  return pose(to).inverse() * pose(from);
}

EventWindow Sequence::window(int k, double window_s) const {
  const double t = timestamps_.at(static_cast<std::size_t>(k));
  auto windows = slice_windows(events_.events, std::span<const double>(&t, 1), window_s);
  windows.front().frame_index = k;
  return std::move(windows.front());
}

VoxelGrid Sequence::voxel(int k, const VoxelOptions& opts) const {
  return voxelize(window(k, opts.window_s), opts.bins, intrinsics_.height, intrinsics_.width,
                  opts.origin);
}

TrainingSample Sequence::sample_at_frame(int k, const SampleOptions& opts) const {
  if (k < 1 || k + 1 >= static_cast<int>(frame_count())) {
    throw Error(ErrorCategory::kRange, "frame " + std::to_string(k) + " has no neighbours");
  }
  TrainingSample s;
  s.frame_index = k;
  for (int i = 0; i < 3; ++i) {
    s.triplet.frames[static_cast<std::size_t>(i)] = frame(k - 1 + i);
    s.triplet.timestamps[static_cast<std::size_t>(i)] = timestamps_[static_cast<std::size_t>(k - 1 + i)];
  }
  s.triplet.intrinsics = intrinsics_;
  s.voxel = voxel_tensor(voxel(k, opts.voxel));
  s.window_end = timestamps_[static_cast<std::size_t>(k)];
  if (opts.neighbor_voxels) {
    s.neighbor_voxels = {voxel_tensor(voxel(k - 1, opts.voxel)),
                         voxel_tensor(voxel(k + 1, opts.voxel))};
  }
  if (opts.depth && has_depth_) std::tie(s.gt_depth, s.gt_valid) = depth(k);
  if (has_poses()) s.gt_poses = {relative_pose(k, k - 1), relative_pose(k, k + 1)};
  s.validate();
  return s;
}

TrainingSample Sequence::sample(std::size_t index, const SampleOptions& opts) const {
  if (index >= indices_.size()) {
    throw Error(ErrorCategory::kRange, "sample index " + std::to_string(index) + " out of " +
                                           std::to_string(indices_.size()));
  }
  return sample_at_frame(indices_[index], opts);
}

TrainingSample load_sample(const fs::path& root, std::size_t index, const SampleOptions& opts) {
  return Sequence::open(root).sample(index, opts);
}

std::vector<int> static_frames(const Sequence& seq, double window_s, std::size_t min_events) {
  std::vector<int> out;
  for (int k = 0; k < static_cast<int>(seq.frame_count()); ++k) {
    if (seq.window(k, window_s).events.size() < min_events) out.push_back(k);
  }
  return out;
}

DatasetSplits DatasetSplits::resolve(const fs::path& root) {
  DatasetSplits s;
  if (fs::exists(root / "timestamps.txt")) {
    s.train.push_back(root);
    return s;
  }
  for (const auto& [name, list] : {std::pair{"train", &s.train}, std::pair{"val", &s.val},
                                   std::pair{"test", &s.test}}) {
    if (fs::exists(root / name / "timestamps.txt")) list->push_back(root / name);
  }
  if (s.train.empty() && s.val.empty() && s.test.empty()) {
    throw Error(ErrorCategory::kIo, "no sequences found under " + root.string());
  }
  return s;
}

}  // namespace evdepth
