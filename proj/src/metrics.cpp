#include "evdepth/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "evdepth/error.hpp"

namespace evdepth {

std::string to_string(Alignment a) {
  return a == Alignment::kMedian ? "median" : "none";
}

Alignment alignment_from_string(const std::string& s) {
  if (s == "median") return Alignment::kMedian;
  if (s == "none") return Alignment::kNone;
  throw Error(ErrorCategory::kUsage, "unknown alignment '" + s + "' (expected median or none)");
}

nlohmann::json CropRegion::to_json() const {
  return {{"top", top}, {"left", left}, {"height", height}, {"width", width}};
}

CropRegion crop_for(Profile profile, int height, int width) {
  if (profile == Profile::kMvsecLike && height >= 200 && width >= 346) return {0, 0, 200, 346};
  return CropRegion::full(height, width);
}

nlohmann::json DepthMetrics::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    rows.push_back({{"cutoff", cutoffs[i]},
                    {"mean_abs_error", errors[i] ? nlohmann::json(*errors[i]) : nlohmann::json()},
                    {"n_valid", n_valid[i]}});
  }
  return {{"alignment", to_string(alignment)}, {"scale", scale}, {"cutoffs", rows}};
}

namespace {

double median_of(const torch::Tensor& values) {
  // lower median, matching torch::median
  return values.median().item<double>();
}

}  // namespace

DepthMetrics mean_error_at_cutoffs(const torch::Tensor& pred, const torch::Tensor& gt,
                                   const torch::Tensor& valid, const std::vector<double>& cutoffs,
                                   Alignment alignment, const CropRegion& crop) {
  if (pred.dim() != 2 || pred.sizes() != gt.sizes() || gt.sizes() != valid.sizes()) {
    throw Error(ErrorCategory::kShape, "pred, gt and valid must be H x W of equal size");
  }
  const auto h = pred.size(0), w = pred.size(1);
  if (crop.top < 0 || crop.left < 0 || crop.height <= 0 || crop.width <= 0 ||
      crop.top + crop.height > h || crop.left + crop.width > w) {
    throw Error(ErrorCategory::kRange, "evaluation crop exceeds the depth map");
  }
  auto window = [&](const torch::Tensor& t) {
    return t.narrow(0, crop.top, crop.height).narrow(1, crop.left, crop.width);
  };
  const auto p = window(pred).to(torch::kDouble);
  const auto g = window(gt).to(torch::kDouble);
  const auto m = window(valid).to(torch::kBool) & torch::isfinite(g) & (g > 0);

  DepthMetrics out;
  out.alignment = alignment;
  out.cutoffs = cutoffs;
  const auto pv = p.masked_select(m);
  const auto gv = g.masked_select(m);
  torch::Tensor aligned = pv;
  if (alignment == Alignment::kMedian && pv.numel() > 0) {
    const double mp = median_of(pv);
    if (!(mp > 0)) throw Error(ErrorCategory::kNumeric, "median prediction is not positive");
    const double mg = median_of(gv);
    out.scale = mg / mp;
    aligned = pv * out.scale;
  }
  const auto err = (aligned - gv).abs();
  for (double c : cutoffs) {
    const auto sel = gv <= c;
    const auto n = sel.sum().item<std::int64_t>();
    out.n_valid.push_back(n);
    if (n == 0) {
      out.errors.emplace_back(std::nullopt);
    } else {
      out.errors.emplace_back(err.masked_select(sel).mean().item<double>());
    }
  }
  return out;
}

MetricsTable make_table(Alignment alignment, const std::vector<double>& cutoffs) {
  MetricsTable t;
  t.alignment = alignment;
  t.cutoffs = cutoffs;
  t.frames.assign(cutoffs.size(), 0);
  t.n_valid.assign(cutoffs.size(), 0);
  return t;
}

void MetricsTable::add(const DepthMetrics& m) {
  if (m.cutoffs != cutoffs || m.alignment != alignment) {
    throw Error(ErrorCategory::kConfig, "frame metrics disagree with the table layout");
  }
  sums_.resize(cutoffs.size(), 0.0);
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    n_valid[i] += m.n_valid[i];
    if (m.errors[i]) {
      sums_[i] += *m.errors[i];
      ++frames[i];
    }
  }
}

std::vector<std::optional<double>> MetricsTable::means() const {
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    if (frames[i] == 0) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(sums_[i] / static_cast<double>(frames[i]));
    }
  }
  return out;
}

nlohmann::json MetricsTable::to_json() const {
  const auto m = means();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    rows.push_back({{"cutoff", cutoffs[i]},
                    {"mean_abs_error", m[i] ? nlohmann::json(*m[i]) : nlohmann::json()},
                    {"frames", frames[i]},
                    {"n_valid", n_valid[i]}});
  }
  return {{"alignment", to_string(alignment)}, {"aggregation", "mean of per-frame means"},
          {"cutoffs", rows}};
}

std::string MetricsTable::to_text() const {
  const auto m = means();
  std::ostringstream ss;
  ss << "alignment: " << to_string(alignment) << "\n";
  ss << "cutoff  mean_abs_error  frames  pixels\n";
  char line[128];
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    if (m[i]) {
      std::snprintf(line, sizeof(line), "%6g  %14.6f  %6lld  %lld\n", cutoffs[i], *m[i],
                    static_cast<long long>(frames[i]), static_cast<long long>(n_valid[i]));
    } else {
      std::snprintf(line, sizeof(line), "%6g  %14s  %6lld  %lld\n", cutoffs[i], "absent",
                    static_cast<long long>(frames[i]), static_cast<long long>(n_valid[i]));
    }
    ss << line;
  }
  return ss.str();
}

}  // namespace evdepth
