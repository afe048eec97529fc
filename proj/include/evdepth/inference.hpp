#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "evdepth/data.hpp"
#include "evdepth/events.hpp"
#include "evdepth/metrics.hpp"
#include "evdepth/models.hpp"

namespace evdepth {

/// A depth network restored from a checkpoint together with the event
/// encoding and preprocessing it was trained with.
class InferenceEngine {
 public:
  static InferenceEngine load(const std::filesystem::path& checkpoint,
                              std::optional<Profile> profile = std::nullopt);

  const ModelConfig& model_config() const { return model_; }
  Profile profile() const { return profile_; }
  const VoxelOptions& voxel_options() const { return voxel_; }

  /// Preprocessing for a sensor of the given size; rejects sizes that do not
  /// map onto the network input.
  Reframe reframe_for_sensor(int height, int width) const;

  /// Depth (H x W, network frame) for a preprocessed B x H x W voxel grid.
  torch::Tensor predict(const torch::Tensor& voxel);

 private:
  ModelConfig model_;
  Profile profile_ = Profile::kNone;
  VoxelOptions voxel_;
  DepthNet net_{nullptr};
};

struct InferOptions {
  /// Window end times; taken from the sequence's timestamps.txt when `events`
  /// is a sequence directory, else consecutive windows from the first event.
  std::optional<std::filesystem::path> timestamps;
  bool write_png = false;
};

struct InferReport {
  std::size_t windows = 0;
  double mean_ms = 0, median_ms = 0, p95_ms = 0, max_ms = 0;
  nlohmann::json to_json() const;
};

/// Writes depth/NNNNNN.bin (+ .json sidecar, optional .png) per window and
/// timing.json into `out`. `events` is an event file or a sequence directory.
InferReport infer(InferenceEngine& engine, const std::filesystem::path& events,
                  const std::filesystem::path& out, const InferOptions& options = {});

/// Window end times for a stream with no frame clock: first event + k * dT.
std::vector<double> consecutive_window_ends(const EventStream& stream, double window_s);

/// Depth (H x W) for a preprocessed sample.
using Predictor = std::function<torch::Tensor(const TrainingSample&)>;

struct EvalOptions {
  std::vector<double> cutoffs = kDefaultCutoffs;
  Alignment alignment = Alignment::kMedian;
  std::optional<CropRegion> crop;  // default: crop_for(profile)
  Profile profile = Profile::kNone;
  VoxelOptions voxel;
  std::size_t panels = 3;  // frames whose arrays are kept for plotting
};

struct EvalReport {
  MetricsTable table;
  std::size_t frames = 0;
  nlohmann::json to_json() const;
};

/// Runs `predict` over the evaluation split (test, else val, else the only
/// sequence) and writes metrics.txt, metrics.json, results.json and panel
/// arrays into `out` (skipped when `out` is empty).
EvalReport evaluate(const Predictor& predict, const std::filesystem::path& dataset,
                    const EvalOptions& options, const std::filesystem::path& out);

/// Evaluation with a trained checkpoint.
EvalReport evaluate(InferenceEngine& engine, const std::filesystem::path& dataset,
                    EvalOptions options, const std::filesystem::path& out);

/// Sequences evaluate() would visit.
std::vector<std::filesystem::path> evaluation_sequences(const std::filesystem::path& dataset);

}  // namespace evdepth
