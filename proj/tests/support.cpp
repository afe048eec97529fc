#include "support.hpp"

#include <algorithm>
#include <cstdlib>

namespace fs = std::filesystem;

namespace evtest {

TempDir::TempDir(const std::string& tag) {
  std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

evdepth::EventWindow random_window(std::mt19937_64& rng, std::size_t n, int h, int w,
                                   double t_start, double t_end) {
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1), up(0, 1);
  evdepth::EventWindow win;
  win.t_start = t_start;
  win.t_end = t_end;
  for (std::size_t i = 0; i < n; ++i) {
    evdepth::Event e;
    // (t_start, t_end]
    e.t = t_end - ut(rng) * (t_end - t_start);
    e.x = static_cast<std::uint16_t>(ux(rng));
    e.y = static_cast<std::uint16_t>(uy(rng));
    e.p = up(rng) ? 1 : -1;
    win.events.push_back(e);
  }
  std::sort(win.events.begin(), win.events.end(),
            [](const evdepth::Event& a, const evdepth::Event& b) { return a.t < b.t; });
  return win;
}

torch::Tensor random_texture(std::mt19937_64& rng, int n, int c, int h, int w, torch::ScalarType dtype) {
  std::normal_distribution<double> g(0.0, 1.0);
  auto coarse = torch::empty({n, c, h / 4 + 2, w / 4 + 2}, torch::kDouble);
  auto* p = coarse.data_ptr<double>();
  for (int64_t i = 0; i < coarse.numel(); ++i) p[i] = g(rng);
  auto up = torch::nn::functional::interpolate(
      coarse, torch::nn::functional::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{h, w})
                  .mode(torch::kBicubic)
                  .align_corners(false));
  return (0.5 + 0.45 * torch::tanh(0.8 * up)).to(dtype);
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

torch::Tensor interior(const torch::Tensor& t, int border) {
  const auto d = t.dim();
  return t.narrow(d - 2, border, t.size(d - 2) - 2 * border)
      .narrow(d - 1, border, t.size(d - 1) - 2 * border);
}

evdepth::SceneConfig small_scene(int frames) {
  evdepth::SceneConfig cfg;
  cfg.num_frames = frames;
  cfg.width = 64;
  cfg.height = 32;
  cfg.fx = cfg.fy = 50.0;
  cfg.cx = 31.5;
  cfg.cy = 15.5;
  cfg.supersampling = 6;
  return cfg;
}

}  // namespace evtest
