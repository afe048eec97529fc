#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace evdepth {

/// Channel widths of the residual-18 feature levels f_e[1..5] (strides 2..32).
inline constexpr std::array<int, 5> kEncoderChannels = {64, 64, 128, 256, 512};
/// Decoder node widths x_d[0..4].
inline constexpr std::array<int, 5> kDecoderChannels = {16, 32, 64, 128, 256};

enum class SkipMode {
  kMultiScale,  // same-level feature + max-pooled copies of every finer level
  kBaseline,    // same-level feature only
};

std::string to_string(SkipMode mode);
SkipMode skip_mode_from_string(const std::string& s);

// --- encoder -----------------------------------------------------------------

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in_channels, int out_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(BasicBlock);

/// Residual-18 backbone whose stem accepts `input_channels`.
/// forward() returns f_e[1..5] as a 5-element vector (index 0 = stride 2).
class ResNetEncoderImpl : public torch::nn::Module {
 public:
  explicit ResNetEncoderImpl(int input_channels);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  int input_channels() const { return input_channels_; }

 private:
  int input_channels_;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  torch::nn::Sequential layer1_{nullptr}, layer2_{nullptr}, layer3_{nullptr}, layer4_{nullptr};
};
TORCH_MODULE(ResNetEncoder);

// --- decoder -----------------------------------------------------------------

/// Wiring of one decoder node x_d[i].
struct DecoderNode {
  int index = 0;
  int upsample_in = 0;       // channels of x_d[i+1] (f_e[5] for i = 4)
  int upsample_out = 0;      // channels leaving U(.)
  int same_level = 0;        // channels of f_e[i]; 0 for i = 0
  std::vector<int> pooled_levels;  // k of every M(f_e[k]) input
  std::vector<int> pool_factors;   // 2^(i-k)
  int pooled_channels = 0;
  int fuse_in = 0;           // input width of D(.)
  int fuse_out = 0;          // width of x_d[i]
};

/// Static description of the decoder graph; built before any layer so the
/// concatenation widths can be audited independently of the modules.
struct DecoderTopology {
  SkipMode mode = SkipMode::kMultiScale;
  std::vector<DecoderNode> nodes;  // ordered i = 4 .. 0

  static DecoderTopology build(SkipMode mode);
  const DecoderNode& node(int index) const;
  int pooled_edge_count() const;
};

struct DecoderOutput {
  std::vector<torch::Tensor> nodes;         // x_d[0..4]
  std::vector<torch::Tensor> disparities;   // sigma[0..s-1], sigma[j] at stride 2^j
};

class DepthDecoderImpl : public torch::nn::Module {
 public:
  DepthDecoderImpl(SkipMode mode, int scales);
  DecoderOutput forward(const std::vector<torch::Tensor>& features);

  const DecoderTopology& topology() const { return topology_; }
  int scales() const { return scales_; }

 private:
  DecoderTopology topology_;
  int scales_;
  std::vector<torch::nn::Conv2d> upsample_convs_;  // indexed by node i
  std::vector<torch::nn::Conv2d> fuse_convs_;
  std::vector<torch::nn::Conv2d> disp_convs_;      // indexed by scale j
};
TORCH_MODULE(DepthDecoder);

// --- full networks -----------------------------------------------------------

struct ModelConfig {
  int voxel_bins = 5;
  int frame_channels = 1;  // channels of one Pose-Net input image
  int scales = 4;
  SkipMode skip = SkipMode::kMultiScale;
  double d_min = 0.1;
  double d_max = 100.0;
  int height = 0;  // network input size (after preprocessing)
  int width = 0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct DepthPrediction {
  std::vector<torch::Tensor> disparities;  // sigma pyramid
  torch::Tensor depth;                     // N x 1 x H x W from sigma[0]
};

class DepthNetImpl : public torch::nn::Module {
 public:
  explicit DepthNetImpl(const ModelConfig& cfg);

  /// voxel: N x B x H x W, H and W divisible by 32.
  DepthPrediction forward(const torch::Tensor& voxel);
  std::vector<torch::Tensor> encode(const torch::Tensor& voxel);

  const ModelConfig& config() const { return cfg_; }
  ResNetEncoder& encoder() { return encoder_; }
  DepthDecoder& decoder() { return decoder_; }

 private:
  ModelConfig cfg_;
  ResNetEncoder encoder_{nullptr};
  DepthDecoder decoder_{nullptr};
};
TORCH_MODULE(DepthNet);

class PoseNetImpl : public torch::nn::Module {
 public:
  explicit PoseNetImpl(int frame_channels);

  /// Channel-concatenates (frame_a, frame_b) and returns N x 6
  /// (axis-angle, translation) for the motion a -> b, scaled by 0.01.
  torch::Tensor forward(const torch::Tensor& frame_a, const torch::Tensor& frame_b);

 private:
  int frame_channels_;
  ResNetEncoder encoder_{nullptr};
  torch::nn::Conv2d squeeze_{nullptr}, pose0_{nullptr}, pose1_{nullptr}, pose2_{nullptr};
};
TORCH_MODULE(PoseNet);

/// Throws a shape error unless both sides are positive multiples of 32.
void require_divisible_by_32(std::int64_t height, std::int64_t width);

std::int64_t count_parameters(const torch::nn::Module& module);

/// Re-initialise the first convolution of `encoder` (He normal).
void reset_stem(ResNetEncoder& encoder);

}  // namespace evdepth
