#include "evdepth/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "evdepth/array_io.hpp"
#include "evdepth/error.hpp"

namespace evdepth {

namespace fs = std::filesystem;

Rgb event_color(float sum, float scale) {
  if (!(scale > 0)) scale = 1.0f;
  const float a = std::clamp(std::abs(sum) / scale, 0.0f, 1.0f);
  const auto fade = static_cast<std::uint8_t>(std::lround(255.0f * (1.0f - a)));
  if (sum > 0) return {255, fade, fade};
  if (sum < 0) return {fade, fade, 255};
  return {255, 255, 255};
}

namespace {

cv::Mat to_mat(const torch::Tensor& rgb) {
  auto c = rgb.to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), CV_8UC3, c.data_ptr<std::uint8_t>());
  return m.clone();
}

torch::Tensor from_mat(const cv::Mat& rgb) {
  return torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
}

// normalised values in [0, 1] -> colour-mapped RGB
torch::Tensor colormap(const torch::Tensor& unit, const torch::Tensor& valid, int map) {
  auto u8 = (unit.clamp(0, 1) * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat gray(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1, u8.data_ptr<std::uint8_t>());
  cv::Mat bgr, rgb;
  cv::applyColorMap(gray, bgr, map);
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto out = from_mat(rgb);
  out.masked_fill_(valid.logical_not().unsqueeze(-1).expand_as(out), 0);
  return out;
}

}  // namespace

torch::Tensor render_events(const torch::Tensor& voxel_sum) {
  auto v = voxel_sum.to(torch::kFloat).contiguous();
  const float scale = std::max(v.abs().max().item<float>(), 1e-6f);
  auto out = torch::empty({v.size(0), v.size(1), 3}, torch::kUInt8);
  auto src = v.accessor<float, 2>();
  auto dst = out.accessor<std::uint8_t, 3>();
  for (int64_t y = 0; y < v.size(0); ++y) {
    for (int64_t x = 0; x < v.size(1); ++x) {
      const auto c = event_color(src[y][x], scale);
      for (int k = 0; k < 3; ++k) dst[y][x][k] = c[k];
    }
  }
  return out;
}

torch::Tensor render_depth(const torch::Tensor& depth, const torch::Tensor& valid, double d_min,
                           double d_max) {
  // near = bright: map inverse depth linearly between the range ends
  auto inv = 1.0 / depth.to(torch::kDouble).clamp(d_min, d_max);
  auto unit = (inv - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max);
  return colormap(unit.to(torch::kFloat), valid.to(torch::kBool), cv::COLORMAP_MAGMA);
}

torch::Tensor render_error(const torch::Tensor& error, const torch::Tensor& valid, double max_error) {
  if (!(max_error > 0)) max_error = 1.0;
  return colormap((error.to(torch::kFloat) / max_error), valid.to(torch::kBool), cv::COLORMAP_HOT);
}

void write_rgb_png(const fs::path& path, const torch::Tensor& rgb) {
  if (rgb.dim() != 3 || rgb.size(2) != 3) throw Error(ErrorCategory::kShape, "expected H x W x 3 image");
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(to_mat(rgb), bgr, cv::COLOR_RGB2BGR);
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", bgr, buf)) throw Error(ErrorCategory::kIo, "PNG encoding failed");
  atomic_write(path, std::span<const char>(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

// --- loss curve ----------------------------------------------------------------

fs::path plot_loss_curve(const fs::path& log, const fs::path& out_dir) {
  std::ifstream in(log);
  if (!in) throw Error(ErrorCategory::kIo, "cannot read " + log.string());
  std::vector<std::pair<double, double>> train, val;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCategory::kFormat, log.string() + ": malformed log line");
    }
    const auto step = j.value("step", 0.0);
    const auto loss = j.value("loss", std::nan(""));
    if (!std::isfinite(loss)) continue;
    (j.value("type", std::string("train")) == "val" ? val : train).emplace_back(step, loss);
  }
  if (train.empty() && val.empty()) return {};

  const int w = 800, h = 480, margin = 60;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto* series : {&train, &val}) {
    for (const auto& [x, y] : *series) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1e-6;
  y0 = std::max(0.0, y0 - 0.05 * (y1 - y0));
  auto px = [&](double x, double y) {
    return cv::Point(margin + static_cast<int>((x - x0) / (x1 - x0) * (w - 2 * margin)),
                     h - margin - static_cast<int>((y - y0) / (y1 - y0) * (h - 2 * margin)));
  };
  const cv::Scalar axis(0, 0, 0);
  cv::line(img, {margin, h - margin}, {w - margin, h - margin}, axis, 1);
  cv::line(img, {margin, margin}, {margin, h - margin}, axis, 1);
  char label[64];
  std::snprintf(label, sizeof(label), "%.4g", y1);
  cv::putText(img, label, {4, margin + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis);
  std::snprintf(label, sizeof(label), "%.4g", y0);
  cv::putText(img, label, {4, h - margin}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis);
  std::snprintf(label, sizeof(label), "step %.0f", x1);
  cv::putText(img, label, {w - margin - 60, h - margin + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis);
  cv::putText(img, "loss", {margin, margin - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis);

  std::vector<cv::Point> pts;
  for (const auto& [x, y] : train) pts.push_back(px(x, y));
  if (pts.size() > 1) cv::polylines(img, pts, false, cv::Scalar(180, 90, 30), 1, cv::LINE_AA);
  for (const auto& [x, y] : val) cv::circle(img, px(x, y), 4, cv::Scalar(20, 120, 240), cv::FILLED);

  const auto path = out_dir / "loss_curve.png";
  cv::Mat rgb;
  cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
  write_rgb_png(path, from_mat(rgb));
  return path;
}

// --- panels --------------------------------------------------------------------

namespace {

torch::Tensor load_map(const fs::path& path) {
  auto a = read_float_array(path);
  if (a.shape.size() != 2) throw Error(ErrorCategory::kFormat, path.string() + ": expected a 2-D array");
  return torch::from_blob(a.data.data(), {a.shape[0], a.shape[1]}, torch::kFloat).clone();
}

}  // namespace

std::vector<fs::path> plot_panels(const fs::path& results, const fs::path& out_dir) {
  const auto j = read_json(results);
  const auto base = results.parent_path();
  std::vector<fs::path> written;
  if (!j.contains("panels")) return written;
  for (const auto& p : j.at("panels")) {
    const auto get = [&](const char* key) -> std::optional<torch::Tensor> {
      if (!p.contains(key)) return std::nullopt;
      const auto path = base / p.at(key).get<std::string>();
      if (!fs::exists(path)) return std::nullopt;
      return load_map(path);
    };
    const auto events = get("events");
    const auto pred = get("pred");
    const auto gt = get("gt");
    auto valid = get("valid");
    if (!pred) continue;
    const auto ones = torch::ones_like(*pred, torch::kBool);
    const auto mask = valid ? (*valid > 0.5) : (gt ? (*gt > 0) : ones);

    double d_min = 1e300, d_max = 0;
    for (const auto& t : {gt, pred}) {
      if (!t) continue;
      auto v = t->masked_select(mask & (*t > 0));
      if (v.numel() == 0) continue;
      d_min = std::min(d_min, v.min().item<double>());
      d_max = std::max(d_max, v.max().item<double>());
    }
    if (!(d_max > 0)) d_max = 1.0;
    if (!(d_max > d_min)) d_min = 0.5 * d_max;

    std::vector<torch::Tensor> tiles;
    if (events) tiles.push_back(render_events(*events));
    tiles.push_back(render_depth(*pred, ones, d_min, d_max));
    if (gt) {
      tiles.push_back(render_depth(*gt, mask, d_min, d_max));
      const auto err = (*pred - *gt).abs();
      const auto ev = err.masked_select(mask);
      const double emax = ev.numel() ? ev.max().item<double>() : 1.0;
      tiles.push_back(render_error(err, mask, emax));
    }
    const auto gap = torch::full({pred->size(0), 4, 3}, 255, torch::kUInt8);
    std::vector<torch::Tensor> row;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      if (i) row.push_back(gap);
      row.push_back(tiles[i]);
    }
    char name[48];
    std::snprintf(name, sizeof(name), "panel_%06d.png", p.value("frame", static_cast<int>(written.size())));
    const auto path = out_dir / name;
    write_rgb_png(path, torch::cat(row, 1));
    written.push_back(path);
  }
  return written;
}

std::vector<fs::path> plot_all(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  std::vector<fs::path> written;
  auto handle = [&](const fs::path& file) {
    if (file.extension() == ".jsonl") {
      if (auto p = plot_loss_curve(file, out_dir); !p.empty()) written.push_back(p);
    } else {
      for (auto& p : plot_panels(file, out_dir)) written.push_back(p);
    }
  };
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const char* name : {"log.jsonl", "results.json"}) {
        if (fs::exists(in / name)) handle(in / name);
      }
    } else if (fs::exists(in)) {
      handle(in);
    } else {
      throw Error(ErrorCategory::kIo, "no such results file " + in.string());
    }
  }
  return written;
}

}  // namespace evdepth
