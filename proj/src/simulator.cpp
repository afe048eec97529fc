#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <Eigen/Geometry>

#include "evdepth/array_io.hpp"
#include "evdepth/data.hpp"
#include "evdepth/error.hpp"

namespace evdepth {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (width <= 0 || height <= 0) throw Error(ErrorCategory::kConfig, "scene size must be positive");
  if (!(fx > 0) || !(fy > 0)) throw Error(ErrorCategory::kConfig, "focal lengths must be positive");
  if (channels != 1 && channels != 3) throw Error(ErrorCategory::kConfig, "channels must be 1 or 3");
  if (num_frames < 3) throw Error(ErrorCategory::kConfig, "trajectory needs at least 3 frames");
  if ((val_frames != 0 && val_frames < 3) || (test_frames != 0 && test_frames < 3)) {
    throw Error(ErrorCategory::kConfig, "held-out splits need at least 3 frames");
  }
  if (!(contrast_threshold > 0)) throw Error(ErrorCategory::kConfig, "contrast threshold must be positive");
  if (!(frame_rate > 0)) throw Error(ErrorCategory::kConfig, "frame rate must be positive");
  if (supersampling < 1) throw Error(ErrorCategory::kConfig, "supersampling must be >= 1");
  if (texture_waves < 1 || !(texture_min_wavelength > 0) ||
      texture_max_wavelength < texture_min_wavelength) {
    throw Error(ErrorCategory::kConfig, "invalid texture parameters");
  }
  if (geometry == SceneGeometry::kPlane && !(plane_distance > 0)) {
    throw Error(ErrorCategory::kConfig, "plane distance must be positive");
  }
}

nlohmann::json SceneConfig::to_json() const {
  return {
      {"seed", seed},
      {"width", width},
      {"height", height},
      {"fx", fx},
      {"fy", fy},
      {"cx", cx},
      {"cy", cy},
      {"channels", channels},
      {"geometry", geometry == SceneGeometry::kPlane ? "plane" : "box"},
      {"plane_distance", plane_distance},
      {"plane_tilt_deg", plane_tilt_deg},
      {"box_half_extent", box_half_extent},
      {"velocity", velocity},
      {"angular_velocity", angular_velocity},
      {"frame_rate", frame_rate},
      {"num_frames", num_frames},
      {"val_frames", val_frames},
      {"test_frames", test_frames},
      {"contrast_threshold", contrast_threshold},
      {"supersampling", supersampling},
      {"log_eps", log_eps},
      {"texture_waves", texture_waves},
      {"texture_min_wavelength", texture_min_wavelength},
      {"texture_max_wavelength", texture_max_wavelength},
      {"texture_amplitude", texture_amplitude},
      {"exclude_below_events", exclude_below_events},
      {"exclusion_window_s", exclusion_window_s},
  };
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw Error(ErrorCategory::kConfig, "unknown scene key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("seed", c.seed);
    get("width", c.width);
    get("height", c.height);
    get("fx", c.fx);
    get("fy", c.fy);
    // principal point defaults to the image centre when the size changes
    c.cx = (c.width - 1) / 2.0;
    c.cy = (c.height - 1) / 2.0;
    get("cx", c.cx);
    get("cy", c.cy);
    get("channels", c.channels);
    if (j.contains("geometry")) {
      const auto g = j.at("geometry").get<std::string>();
      if (g == "plane") c.geometry = SceneGeometry::kPlane;
      else if (g == "box") c.geometry = SceneGeometry::kBox;
      else throw Error(ErrorCategory::kConfig, "geometry must be 'plane' or 'box'");
    }
    get("plane_distance", c.plane_distance);
    get("plane_tilt_deg", c.plane_tilt_deg);
    get("box_half_extent", c.box_half_extent);
    get("velocity", c.velocity);
    get("angular_velocity", c.angular_velocity);
    get("frame_rate", c.frame_rate);
    get("num_frames", c.num_frames);
    get("val_frames", c.val_frames);
    get("test_frames", c.test_frames);
    get("contrast_threshold", c.contrast_threshold);
    get("supersampling", c.supersampling);
    get("log_eps", c.log_eps);
    get("texture_waves", c.texture_waves);
    get("texture_min_wavelength", c.texture_min_wavelength);
    get("texture_max_wavelength", c.texture_max_wavelength);
    get("texture_amplitude", c.texture_amplitude);
    get("exclude_below_events", c.exclude_below_events);
    get("exclusion_window_s", c.exclusion_window_s);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kConfig, std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

CameraIntrinsics SceneConfig::intrinsics() const {
  return {fx, fy, cx, cy, width, height};
}

// --- renderer ----------------------------------------------------------------

SceneRenderer::SceneRenderer(const SceneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double amp = cfg.texture_amplitude / std::sqrt(0.5 * cfg.texture_waves);
  const double log_min = std::log(cfg.texture_min_wavelength);
  const double log_max = std::log(cfg.texture_max_wavelength);
  for (int i = 0; i < cfg.texture_waves; ++i) {
    Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    const double wavelength = std::exp(log_min + (log_max - log_min) * unit(rng));
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    waves_.push_back({dir * (2.0 * std::numbers::pi / wavelength), phase, amp * 0.5});
  }

  if (cfg.geometry == SceneGeometry::kPlane) {
    const double tilt = cfg.plane_tilt_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d n(0.0, std::sin(tilt), std::cos(tilt));
    planes_.emplace_back(n, cfg.plane_distance * std::cos(tilt));
  } else {
    const auto& e = cfg.box_half_extent;
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {-1.0, 1.0}) {
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        n[axis] = sign;
        planes_.emplace_back(n, e[static_cast<std::size_t>(axis)]);
      }
    }
  }
}

RigidTransform SceneRenderer::pose_at(double t) const {
  const Eigen::Vector3d w(cfg_.angular_velocity[0], cfg_.angular_velocity[1],
                          cfg_.angular_velocity[2]);
  const Eigen::Vector3d v(cfg_.velocity[0], cfg_.velocity[1], cfg_.velocity[2]);
  const Eigen::Vector3d r = w * t;
  return {pose_vector_to_transform({r.x(), r.y(), r.z(), 0, 0, 0}).rotation(), v * t};
}

double SceneRenderer::texture(const Eigen::Vector3d& p, int c) const {
  double s = 0.0;
  for (const auto& wave : waves_) s += wave.amplitude * std::sin(wave.k.dot(p) + wave.phase + 1.3 * c);
  return 0.5 + 0.45 * std::tanh(s / 0.45);
}

std::pair<torch::Tensor, torch::Tensor> SceneRenderer::render(const RigidTransform& pose) const {
  const int h = cfg_.height, w = cfg_.width, channels = cfg_.channels;
  auto image = torch::zeros({channels, h, w}, torch::kFloat);
  auto depth = torch::zeros({h, w}, torch::kFloat);
  auto img = image.accessor<float, 3>();
  auto dep = depth.accessor<float, 2>();
  const Eigen::Matrix3d& rot = pose.rotation();
  const Eigen::Vector3d& origin = pose.translation();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d ray((x - cfg_.cx) / cfg_.fx, (y - cfg_.cy) / cfg_.fy, 1.0);
      const Eigen::Vector3d dir = rot * ray;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [n, d] : planes_) {
        const double denom = n.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double lambda = (d - n.dot(origin)) / denom;
        if (lambda > 1e-9 && lambda < best) best = lambda;
      }
      if (!std::isfinite(best)) continue;
      const Eigen::Vector3d p = origin + best * dir;
      dep[y][x] = static_cast<float>(best);  // ray has unit z in the camera frame
      for (int c = 0; c < channels; ++c) img[c][y][x] = static_cast<float>(texture(p, c));
    }
  }
  return {image, depth};
}

// --- dataset writer ----------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

torch::Tensor log_intensity(const torch::Tensor& image, double eps) {
  auto gray = image.size(0) == 3
                  ? 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
                  : image[0];
  return torch::log(gray.to(torch::kDouble) + eps);
}

nlohmann::json write_sequence(const SceneConfig& cfg, const SceneRenderer& renderer,
                              int first_frame, int frames, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "depth");
  const int h = cfg.height, w = cfg.width;
  const int steps = frames * cfg.supersampling;
  const double step_dt = 1.0 / (cfg.frame_rate * cfg.supersampling);
  const double t0 = first_frame / cfg.frame_rate;
  const double threshold = cfg.contrast_threshold;

  EventStream stream;
  stream.height = h;
  stream.width = w;
  std::string timestamps, poses;

  auto prev_log = log_intensity(renderer.render(renderer.pose_at(t0)).first, cfg.log_eps);
  auto reference = prev_log.clone();
  std::vector<Event> interval;
  for (int s = 1; s <= steps; ++s) {
    const double ta = t0 + (s - 1) * step_dt;
    const double tb = t0 + s * step_dt;
    const auto pose = renderer.pose_at(tb);
    auto [image, depth] = renderer.render(pose);
    auto cur_log = log_intensity(image, cfg.log_eps);

    auto la = prev_log.accessor<double, 2>();
    auto lb = cur_log.accessor<double, 2>();
    auto ref = reference.accessor<double, 2>();
    interval.clear();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double a = la[y][x], b = lb[y][x];
        if (a == b) continue;
        const std::int8_t pol = b > a ? 1 : -1;
        while (pol * (b - ref[y][x]) >= threshold) {
          ref[y][x] += pol * threshold;
          const double frac = (ref[y][x] - a) / (b - a);
          interval.push_back({ta + frac * (tb - ta), static_cast<std::uint16_t>(x),
                              static_cast<std::uint16_t>(y), pol});
        }
      }
    }
    std::stable_sort(interval.begin(), interval.end(),
                     [](const Event& l, const Event& r) { return l.t < r.t; });
    stream.events.insert(stream.events.end(), interval.begin(), interval.end());
    prev_log = cur_log;

    if (s % cfg.supersampling == 0) {
      const int k = s / cfg.supersampling - 1;
      write_image(frame_path(dir, k), image);
      FloatArray d;
      d.shape = {h, w};
      d.data.assign(depth.data_ptr<float>(), depth.data_ptr<float>() + depth.numel());
      write_float_array(depth_path(dir, k), d);
      timestamps += fmt_double(tb) + "\n";
      const auto& r = pose.rotation();
      const auto& t = pose.translation();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) poses += fmt_double(r(i, j)) + " ";
      poses += fmt_double(t.x()) + " " + fmt_double(t.y()) + " " + fmt_double(t.z()) + "\n";
    }
  }

  write_event_file(dir / "events.bin", stream);
  atomic_write(dir / "timestamps.txt", timestamps);
  atomic_write(dir / "poses.txt", poses);
  cfg.intrinsics().save(dir / "calib.json");

  std::string excluded;
  if (cfg.exclude_below_events > 0) {
    const auto seq = Sequence::open(dir);
    for (int k : static_frames(seq, cfg.exclusion_window_s, cfg.exclude_below_events)) {
      excluded += std::to_string(k) + "\n";
    }
  }
  atomic_write(dir / "exclude.txt", excluded);
  return {{"dir", dir.string()}, {"frames", frames}, {"events", stream.events.size()}};
}

}  // namespace

nlohmann::json synth_scene(const SceneConfig& cfg, const fs::path& out) {
  cfg.validate();
  SceneRenderer renderer(cfg);
  nlohmann::json summary;
  summary["warnings"] = nlohmann::json::array();
  const bool moving = std::any_of(cfg.velocity.begin(), cfg.velocity.end(), [](double v) { return v != 0; }) ||
                      std::any_of(cfg.angular_velocity.begin(), cfg.angular_velocity.end(),
                                  [](double v) { return v != 0; });
  if (!moving) summary["warnings"].push_back("static trajectory: no events will be generated");

  fs::create_directories(out);
  atomic_write(out / "scene.json", cfg.to_json().dump(2) + "\n");
  summary["sequences"] = nlohmann::json::array();
  if (cfg.val_frames == 0 && cfg.test_frames == 0) {
    summary["sequences"].push_back(write_sequence(cfg, renderer, 0, cfg.num_frames, out));
    return summary;
  }
  int first = 0;
  for (const auto& [name, n] : {std::pair{"train", cfg.num_frames}, std::pair{"val", cfg.val_frames},
                                std::pair{"test", cfg.test_frames}}) {
    if (n == 0) continue;
    summary["sequences"].push_back(write_sequence(cfg, renderer, first, n, out / name));
    first += n;
  }
  return summary;
}

}  // namespace evdepth
