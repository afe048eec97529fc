#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evdepth/data.hpp"
#include "evdepth/events.hpp"

namespace evtest {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "evdepth");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// `n` sorted events uniformly inside (t_start, t_end] on an h x w sensor.
evdepth::EventWindow random_window(std::mt19937_64& rng, std::size_t n, int h, int w,
                                   double t_start, double t_end);

/// Smooth random texture in [0.05, 0.95], N x C x H x W.
torch::Tensor random_texture(std::mt19937_64& rng, int n, int c, int h, int w,
                             torch::ScalarType dtype = torch::kFloat);

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b);

/// Interior slice (drop `border` pixels on every side) of an ... x H x W tensor.
torch::Tensor interior(const torch::Tensor& t, int border);

/// Small plane scene, moving sideways, written to `dir`.
evdepth::SceneConfig small_scene(int frames = 12);

}  // namespace evtest
