#include "evdepth/models.hpp"

#include <string>

#include "evdepth/error.hpp"

namespace evdepth {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(SkipMode mode) {
  return mode == SkipMode::kMultiScale ? "multi-scale" : "baseline-skip";
}

SkipMode skip_mode_from_string(const std::string& s) {
  if (s == "multi-scale") return SkipMode::kMultiScale;
  if (s == "baseline-skip") return SkipMode::kBaseline;
  throw Error(ErrorCategory::kConfig, "unknown decoder mode '" + s + "'");
}

void require_divisible_by_32(std::int64_t height, std::int64_t width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw Error(ErrorCategory::kShape, "network input " + std::to_string(height) + "x" +
                                           std::to_string(width) +
                                           " is not divisible by 32");
  }
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding, bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

nn::Conv2d reflect_conv3x3(int in, int out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3));
}

// Reflect padding; single-pixel maps replicate.
torch::Tensor padded_conv(nn::Conv2d& conv, const torch::Tensor& x) {
  const bool reflect = x.size(2) > 1 && x.size(3) > 1;
  auto opts = F::PadFuncOptions({1, 1, 1, 1});
  if (reflect) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return conv(F::pad(x, opts));
}

void he_init(nn::Module& module) {
  for (auto& child : module.modules(/*include_self=*/false)) {
    if (auto* c = child->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* bn = child->as<nn::BatchNorm2d>()) {
      nn::init::ones_(bn->weight);
      nn::init::zeros_(bn->bias);
    }
  }
}

}  // namespace

// --- encoder -----------------------------------------------------------------

BasicBlockImpl::BasicBlockImpl(int in_channels, int out_channels, int stride) {
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3, stride, 1));
  bn1_ = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3, 1, 1));
  bn2_ = register_module("bn2", nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    downsample_ = register_module(
        "downsample",
        nn::Sequential(conv(in_channels, out_channels, 1, stride, 0), nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1_(conv1_(x)));
  out = bn2_(conv2_(out));
  auto identity = downsample_ ? downsample_->forward(x) : x;
  return torch::relu(out + identity);
}

ResNetEncoderImpl::ResNetEncoderImpl(int input_channels) : input_channels_(input_channels) {
  if (input_channels < 1) throw Error(ErrorCategory::kConfig, "encoder needs input channels");
  conv1_ = register_module("conv1", conv(input_channels, 64, 7, 2, 3));
  bn1_ = register_module("bn1", nn::BatchNorm2d(64));
  auto layer = [](int in, int out, int stride) {
    return nn::Sequential(BasicBlock(in, out, stride), BasicBlock(out, out, 1));
  };
  layer1_ = register_module("layer1", layer(64, 64, 1));
  layer2_ = register_module("layer2", layer(64, 128, 2));
  layer3_ = register_module("layer3", layer(128, 256, 2));
  layer4_ = register_module("layer4", layer(256, 512, 2));
  he_init(*this);
}

std::vector<torch::Tensor> ResNetEncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != input_channels_) {
    throw Error(ErrorCategory::kShape, "encoder expects N x " + std::to_string(input_channels_) +
                                           " x H x W input");
  }
  std::vector<torch::Tensor> f;
  f.reserve(5);
  f.push_back(torch::relu(bn1_(conv1_(x))));
  f.push_back(layer1_->forward(F::max_pool2d(f.back(), F::MaxPool2dFuncOptions(3).stride(2).padding(1))));
  f.push_back(layer2_->forward(f.back()));
  f.push_back(layer3_->forward(f.back()));
  f.push_back(layer4_->forward(f.back()));
  return f;
}

void reset_stem(ResNetEncoder& encoder) {
  torch::NoGradGuard guard;
  auto params = encoder->named_parameters();
  nn::init::kaiming_normal_(params["conv1.weight"], 0.0, torch::kFanOut, torch::kReLU);
}

// --- decoder -----------------------------------------------------------------

DecoderTopology DecoderTopology::build(SkipMode mode) {
  DecoderTopology topo;
  topo.mode = mode;
  for (int i = 4; i >= 0; --i) {
    DecoderNode node;
    node.index = i;
    node.upsample_in = i == 4 ? kEncoderChannels[4] : kDecoderChannels[i + 1];
    node.upsample_out = kDecoderChannels[i];
    node.fuse_out = kDecoderChannels[i];
    if (i > 0) {
      node.same_level = kEncoderChannels[i - 1];  // f_e[i]
      if (mode == SkipMode::kMultiScale) {
        for (int k = 1; k <= i - 1; ++k) {
          node.pooled_levels.push_back(k);
          node.pool_factors.push_back(1 << (i - k));
          node.pooled_channels += kEncoderChannels[k - 1];
        }
      }
    }
    node.fuse_in = node.same_level + node.pooled_channels + node.upsample_out;
    topo.nodes.push_back(node);
  }
  return topo;
}

const DecoderNode& DecoderTopology::node(int index) const {
  for (const auto& n : nodes) {
    if (n.index == index) return n;
  }
  throw Error(ErrorCategory::kShape, "no decoder node " + std::to_string(index));
}

int DecoderTopology::pooled_edge_count() const {
  int n = 0;
  for (const auto& node : nodes) n += static_cast<int>(node.pooled_levels.size());
  return n;
}

DepthDecoderImpl::DepthDecoderImpl(SkipMode mode, int scales)
    : topology_(DecoderTopology::build(mode)), scales_(scales) {
  if (scales < 1 || scales > 4) {
    throw Error(ErrorCategory::kConfig, "decoder supports 1 to 4 output scales");
  }
  upsample_convs_.resize(5, nullptr);
  fuse_convs_.resize(5, nullptr);
  for (const auto& node : topology_.nodes) {
    const auto i = static_cast<std::size_t>(node.index);
    upsample_convs_[i] = register_module("upconv_" + std::to_string(i),
                                         reflect_conv3x3(node.upsample_in, node.upsample_out));
    fuse_convs_[i] = register_module("fuse_" + std::to_string(i),
                                     reflect_conv3x3(node.fuse_in, node.fuse_out));
    // construction-time audit: the layer widths are the topology widths
    TORCH_CHECK(fuse_convs_[i]->options.in_channels() == node.fuse_in,
                "decoder node ", i, " fuse width mismatch");
  }
  for (int j = 0; j < scales_; ++j) {
    disp_convs_.push_back(register_module("dispconv_" + std::to_string(j),
                                          reflect_conv3x3(kDecoderChannels[j], 1)));
  }
}

DecoderOutput DepthDecoderImpl::forward(const std::vector<torch::Tensor>& features) {
  if (features.size() != 5) {
    throw Error(ErrorCategory::kShape, "decoder expects 5 encoder features");
  }
  DecoderOutput out;
  out.nodes.resize(5);
  torch::Tensor x = features[4];  // x_d[5] aliases f_e[5]
  for (const auto& node : topology_.nodes) {
    const auto i = static_cast<std::size_t>(node.index);
    auto up = F::elu(padded_conv(upsample_convs_[i], x));
    up = F::interpolate(up, F::InterpolateFuncOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kBilinear)
                                .align_corners(false)
                                .recompute_scale_factor(false));
    std::vector<torch::Tensor> parts;
    if (node.index > 0) {
      const auto& same = features[i - 1];
      parts.push_back(same);
      for (std::size_t p = 0; p < node.pooled_levels.size(); ++p) {
        const auto k = static_cast<std::size_t>(node.pooled_levels[p]);
        const int factor = node.pool_factors[p];
        parts.push_back(F::max_pool2d(features[k - 1], F::MaxPool2dFuncOptions(factor).stride(factor)));
      }
      parts.push_back(up);
      for (const auto& part : parts) {
        if (part.size(2) != same.size(2) || part.size(3) != same.size(3)) {
          throw Error(ErrorCategory::kShape,
                      "decoder node " + std::to_string(node.index) + ": spatial size mismatch");
        }
      }
    } else {
      parts.push_back(up);
    }
    auto cat = parts.size() == 1 ? parts.front() : torch::cat(parts, 1);
    if (cat.size(1) != node.fuse_in) {
      throw Error(ErrorCategory::kShape, "decoder node " + std::to_string(node.index) +
                                             ": concatenated width " +
                                             std::to_string(cat.size(1)) + " != " +
                                             std::to_string(node.fuse_in));
    }
    x = F::elu(padded_conv(fuse_convs_[i], cat));
    out.nodes[i] = x;
  }
  for (int j = 0; j < scales_; ++j) {
    out.disparities.push_back(torch::sigmoid(padded_conv(disp_convs_[static_cast<std::size_t>(j)], out.nodes[static_cast<std::size_t>(j)])));
  }
  return out;
}

// --- networks ----------------------------------------------------------------

nlohmann::json ModelConfig::to_json() const {
  return {{"voxel_bins", voxel_bins}, {"frame_channels", frame_channels},
          {"scales", scales},         {"decoder", to_string(skip)},
          {"d_min", d_min},           {"d_max", d_max},
          {"height", height},         {"width", width}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.voxel_bins = j.at("voxel_bins").get<int>();
    c.frame_channels = j.at("frame_channels").get<int>();
    c.scales = j.at("scales").get<int>();
    c.skip = skip_mode_from_string(j.at("decoder").get<std::string>());
    c.d_min = j.at("d_min").get<double>();
    c.d_max = j.at("d_max").get<double>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kFormat, std::string("model config: ") + e.what());
  }
  return c;
}

DepthNetImpl::DepthNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  encoder_ = register_module("encoder", ResNetEncoder(cfg.voxel_bins));
  decoder_ = register_module("decoder", DepthDecoder(cfg.skip, cfg.scales));
}

std::vector<torch::Tensor> DepthNetImpl::encode(const torch::Tensor& voxel) {
  if (voxel.dim() != 4) throw Error(ErrorCategory::kShape, "voxel batch must be N x B x H x W");
  require_divisible_by_32(voxel.size(2), voxel.size(3));
  return encoder_->forward(voxel);
}

DepthPrediction DepthNetImpl::forward(const torch::Tensor& voxel) {
  auto decoded = decoder_->forward(encode(voxel));
  DepthPrediction out;
  out.disparities = std::move(decoded.disparities);
  const double b = 1.0 / cfg_.d_max;
  const double a = 1.0 / cfg_.d_min - b;
  out.depth = 1.0 / (a * out.disparities.front() + b);
  return out;
}

PoseNetImpl::PoseNetImpl(int frame_channels) : frame_channels_(frame_channels) {
  encoder_ = register_module("encoder", ResNetEncoder(2 * frame_channels));
  squeeze_ = register_module("squeeze", nn::Conv2d(nn::Conv2dOptions(512, 256, 1)));
  pose0_ = register_module("pose0", nn::Conv2d(nn::Conv2dOptions(256, 256, 3).padding(1)));
  pose1_ = register_module("pose1", nn::Conv2d(nn::Conv2dOptions(256, 256, 3).padding(1)));
  pose2_ = register_module("pose2", nn::Conv2d(nn::Conv2dOptions(256, 6, 1)));
}

torch::Tensor PoseNetImpl::forward(const torch::Tensor& frame_a, const torch::Tensor& frame_b) {
  if (frame_a.sizes() != frame_b.sizes() || frame_a.dim() != 4 ||
      frame_a.size(1) != frame_channels_) {
    throw Error(ErrorCategory::kShape, "pose inputs must be two N x " +
                                           std::to_string(frame_channels_) +
                                           " x H x W frames of equal shape");
  }
  auto x = (torch::cat({frame_a, frame_b}, 1) - 0.45) / 0.225;
  auto f = encoder_->forward(x).back();
  auto out = torch::relu(squeeze_(f));
  out = torch::relu(pose0_(out));
  out = torch::relu(pose1_(out));
  out = pose2_(out).mean({2, 3});
  return 0.01 * out;
}

}  // namespace evdepth
