#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "evdepth/data.hpp"

namespace evdepth {

enum class Alignment { kNone, kMedian };

std::string to_string(Alignment a);
Alignment alignment_from_string(const std::string& s);

inline const std::vector<double> kDefaultCutoffs{10.0, 20.0, 30.0};

/// Rows [top, top+height) and columns [left, left+width) of the evaluated map.
struct CropRegion {
  int top = 0, left = 0;
  int height = 0, width = 0;

  static CropRegion full(int height, int width) { return {0, 0, height, width}; }
  nlohmann::json to_json() const;
  bool operator==(const CropRegion&) const = default;
};

/// Evaluation region in the preprocessed frame: the top 200 x 346 of the
/// padded mvsec-like frame, the whole frame otherwise.
CropRegion crop_for(Profile profile, int height, int width);

struct DepthMetrics {
  Alignment alignment = Alignment::kMedian;
  std::vector<double> cutoffs;
  std::vector<std::optional<double>> errors;  // absent when no pixel qualifies
  std::vector<std::int64_t> n_valid;
  double scale = 1.0;  // factor applied to the prediction

  nlohmann::json to_json() const;
};

/// Mean |pred - gt| over valid, in-crop pixels with gt <= cutoff. Median
/// alignment rescales pred by median(gt) / median(pred) over the valid
/// in-crop pixels first. pred, gt, valid are H x W.
DepthMetrics mean_error_at_cutoffs(const torch::Tensor& pred, const torch::Tensor& gt,
                                   const torch::Tensor& valid, const std::vector<double>& cutoffs,
                                   Alignment alignment, const CropRegion& crop);

/// Mean of per-frame mean errors for each cutoff.
struct MetricsTable {
  Alignment alignment = Alignment::kMedian;
  std::vector<double> cutoffs;
  std::vector<std::int64_t> frames;   // frames contributing per cutoff
  std::vector<std::int64_t> n_valid;  // pixels summed over frames

  void add(const DepthMetrics& m);
  std::vector<std::optional<double>> means() const;
  nlohmann::json to_json() const;
  std::string to_text() const;

 private:
  std::vector<double> sums_;
};

MetricsTable make_table(Alignment alignment, const std::vector<double>& cutoffs);

}  // namespace evdepth
