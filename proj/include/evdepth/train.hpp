#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "evdepth/checkpoint.hpp"
#include "evdepth/data.hpp"
#include "evdepth/models.hpp"
#include "evdepth/photometric.hpp"

namespace evdepth {

enum class Ablation {
  kCrossModal,        // intensity frames supervise the event depth network
  kEventConsistency,  // adjacent voxel grids replace the frames
  kBaselineSkip,      // cross-modal loss, plain skip-connection decoder
};

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  int lr_drop_epoch = 8;
  std::array<double, 2> betas{0.9, 0.999};
  double adam_eps = 1e-8;
  int scales = 4;
  double d_min = 0.1;
  double d_max = 100.0;
  Profile profile = Profile::kMvsecLike;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kCrossModal;

  // event encoding
  int bins = kDefaultBins;
  double window_s = kDefaultWindowSeconds;

  bool augment = true;
  double smoothness_weight = 0.0;
  std::int64_t max_steps = 0;         // 0 = run all epochs
  std::int64_t checkpoint_every = 0;  // steps; 0 = end of each epoch only

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

/// lr_initial before lr_drop_epoch, lr_final from then on.
double lr_schedule(int epoch, const TrainConfig& cfg);

/// Single-threaded, deterministic kernels.
void set_deterministic(bool on);

/// Squashes signed voxel values into [0, 1] so they can stand in for frames
/// in the event-consistency ablation.
torch::Tensor voxel_to_image(const torch::Tensor& voxel);

/// Adam over an ordered parameter list; moments are plain tensors so they can
/// be checkpointed.
class Adam {
 public:
  Adam(std::vector<torch::Tensor> params, std::array<double, 2> betas, double eps);

  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  void export_to(Checkpoint& ckpt) const;
  void import_from(const Checkpoint& ckpt);

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> m_, v_;
  std::array<double, 2> betas_;
  double eps_;
  std::int64_t steps_ = 0;
};

/// Stacked tensors of a uniform batch.
struct Batch {
  std::vector<int> frame_indices;
  torch::Tensor voxels;      // N x B x H x W
  torch::Tensor prev, target, next;  // N x C x H x W
  torch::Tensor voxel_prev, voxel_next;  // only for event consistency
  torch::Tensor intrinsics;  // N x 3 x 3
};

Batch collate(const std::vector<TrainingSample>& samples);

/// Model parameters, optimiser moments and progress counters.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const ModelConfig& model);

  const TrainConfig& config() const { return cfg_; }
  const ModelConfig& model_config() const { return model_; }
  DepthNet& depth_net() { return depth_; }
  PoseNet& pose_net() { return pose_; }

  std::int64_t step() const { return step_; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }
  const std::vector<double>& loss_history() const { return history_; }

  /// Forward pass and loss for a batch (no update).
  LossBreakdown compute_loss(const Batch& batch);

  /// One optimiser update. A non-finite loss or gradient rejects the step
  /// (state untouched) with a numeric error naming the batch frames.
  LossBreakdown train_step(const Batch& batch);

  /// Loss in inference mode, no gradients.
  LossBreakdown validation_loss(const Batch& batch);

  Checkpoint to_checkpoint() const;
  /// Restores parameters, moments and counters; rejects a checkpoint whose
  /// manifest disagrees with this trainer's configuration.
  void restore(const Checkpoint& ckpt);

  /// Predicted pose vectors (N x 6) for k -> k-1 (inverted) and k -> k+1.
  std::pair<torch::Tensor, torch::Tensor> predict_poses(const Batch& batch);

 private:
  struct LossImages {
    torch::Tensor prev, target, next;
  };
  LossImages images(const Batch& batch) const;

  TrainConfig cfg_;
  ModelConfig model_;
  PhotometricConfig photometric_;
  DepthNet depth_{nullptr};
  PoseNet pose_{nullptr};
  std::unique_ptr<Adam> adam_;
  std::int64_t step_ = 0;
  int epoch_ = 0;
  std::vector<double> history_;
};

/// Derives the network configuration from a training config and the input
/// size after preprocessing.
ModelConfig model_config_for(const TrainConfig& cfg, int frame_channels, int height, int width);

struct FitOptions {
  std::optional<std::filesystem::path> resume;
  /// Checkpoint whose depth encoder weights seed a fresh run; the first
  /// convolution is re-initialised for the voxel channels either way.
  std::optional<std::filesystem::path> encoder_init;
  bool deterministic = false;
  /// Called after each step with the JSON log record.
  std::function<void(const nlohmann::json&)> on_step;
};

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::vector<double> losses;
  std::vector<double> val_losses;
  std::int64_t steps = 0;
};

/// Trains on `dataset` and writes checkpoints plus a JSON-lines log
/// (`log.jsonl`) into `out`.
FitResult fit(const TrainConfig& cfg, const std::filesystem::path& dataset,
              const std::filesystem::path& out, const FitOptions& options = {});

/// Samples of one training index list, preprocessed and (optionally)
/// augmented with the per-sample generator of `epoch`.
class TrainingSet {
 public:
  TrainingSet(std::vector<std::filesystem::path> sequences, const TrainConfig& cfg);

  std::size_t size() const { return refs_.size(); }
  TrainingSample get(std::size_t i, std::optional<std::uint64_t> augment_epoch) const;
  int frame_channels() const { return frame_channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<Sequence>& sequences() const { return sequences_; }

 private:
  std::vector<Sequence> sequences_;
  std::vector<std::pair<std::size_t, std::size_t>> refs_;  // (sequence, index)
  TrainConfig cfg_;
  SampleOptions opts_;
  int frame_channels_ = 1;
  int height_ = 0, width_ = 0;
};

}  // namespace evdepth
