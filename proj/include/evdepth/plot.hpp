#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace evdepth {

using Rgb = std::array<std::uint8_t, 3>;

/// Summed event polarity as a colour: positive red, negative blue, zero
/// white. `scale` is the magnitude drawn at full saturation.
Rgb event_color(float sum, float scale);

/// H x W x 3 uint8 RGB renderings.
torch::Tensor render_events(const torch::Tensor& voxel_sum);
/// Inverse-depth colour map over [d_min, d_max]; invalid pixels black.
torch::Tensor render_depth(const torch::Tensor& depth, const torch::Tensor& valid, double d_min,
                           double d_max);
torch::Tensor render_error(const torch::Tensor& error, const torch::Tensor& valid, double max_error);

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& rgb);

/// Line plot of training (and validation) loss from a JSON-lines log.
std::filesystem::path plot_loss_curve(const std::filesystem::path& log,
                                      const std::filesystem::path& out_dir);

/// Qualitative panels (events | prediction | ground truth | error) for each
/// panel listed in an evaluation results file.
std::vector<std::filesystem::path> plot_panels(const std::filesystem::path& results,
                                               const std::filesystem::path& out_dir);

/// Accepts results.json files, log.jsonl files, or directories holding
/// either; returns every image written. Nothing to plot is not an error.
std::vector<std::filesystem::path> plot_all(const std::vector<std::filesystem::path>& inputs,
                                            const std::filesystem::path& out_dir);

}  // namespace evdepth
