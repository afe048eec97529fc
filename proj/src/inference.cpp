#include "evdepth/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "evdepth/array_io.hpp"
#include "evdepth/checkpoint.hpp"
#include "evdepth/error.hpp"
#include "evdepth/plot.hpp"

namespace evdepth {

namespace fs = std::filesystem;

InferenceEngine InferenceEngine::load(const fs::path& checkpoint, std::optional<Profile> profile) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto& m = ckpt.manifest;
  if (!m.contains("model")) throw Error(ErrorCategory::kFormat, checkpoint.string() + ": manifest has no model");
  InferenceEngine e;
  e.model_ = ModelConfig::from_json(m.at("model"));
  e.profile_ = Profile::kNone;
  e.voxel_.bins = e.model_.voxel_bins;
  if (m.contains("train")) {
    const auto& t = m.at("train");
    e.profile_ = profile_from_string(t.value("profile", std::string("none")));
    e.voxel_.window_s = t.value("window_s", kDefaultWindowSeconds);
  }
  if (profile) e.profile_ = *profile;
  e.net_ = DepthNet(e.model_);
  import_state(*e.net_, "depth.", ckpt);
  e.net_->eval();
  return e;
}

Reframe InferenceEngine::reframe_for_sensor(int height, int width) const {
  Reframe r;
  try {
    r = reframe_for(profile_, height, width);
  } catch (const Error& err) {
    throw Error(ErrorCategory::kShape, std::string("sensor size does not fit the checkpoint: ") + err.what());
  }
  if (r.out_height != model_.height || r.out_width != model_.width) {
    throw Error(ErrorCategory::kShape,
                "sensor " + std::to_string(height) + "x" + std::to_string(width) + " maps to " +
                    std::to_string(r.out_height) + "x" + std::to_string(r.out_width) +
                    " but the checkpoint expects " + std::to_string(model_.height) + "x" +
                    std::to_string(model_.width));
  }
  return r;
}

torch::Tensor InferenceEngine::predict(const torch::Tensor& voxel) {
  if (voxel.dim() != 3 || voxel.size(0) != model_.voxel_bins || voxel.size(1) != model_.height ||
      voxel.size(2) != model_.width) {
    throw Error(ErrorCategory::kShape, "voxel grid does not match the checkpoint input");
  }
  torch::NoGradGuard guard;
  return net_->forward(voxel.unsqueeze(0)).depth[0][0].contiguous();
}

// --- infer -------------------------------------------------------------------

nlohmann::json InferReport::to_json() const {
  return {{"windows", windows}, {"mean_ms", mean_ms}, {"median_ms", median_ms},
          {"p95_ms", p95_ms},   {"max_ms", max_ms}};
}

std::vector<double> consecutive_window_ends(const EventStream& stream, double window_s) {
  if (!(window_s > 0)) throw Error(ErrorCategory::kRange, "window length must be positive");
  std::vector<double> ends;
  if (stream.events.empty()) return ends;
  const double t0 = stream.events.front().t;
  const double t1 = stream.events.back().t;
  // windows are half-open on the left, so start just below the first event
  const double start = std::nextafter(t0, -1e300);
  for (std::size_t k = 1;; ++k) {
    const double end = start + static_cast<double>(k) * window_s;
    ends.push_back(end);
    if (end >= t1) break;
  }
  return ends;
}

namespace {

FloatArray to_array(const torch::Tensor& t, nlohmann::json meta = nlohmann::json::object()) {
  auto c = t.to(torch::kFloat).contiguous();
  FloatArray a;
  a.shape = c.sizes().vec();
  a.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  a.meta = std::move(meta);
  return a;
}

std::string numbered(int k, const char* ext) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d%s", k, ext);
  return name;
}

}  // namespace

InferReport infer(InferenceEngine& engine, const fs::path& events, const fs::path& out,
                  const InferOptions& options) {
  EventStream stream;
  std::vector<double> ends;
  if (fs::is_directory(events)) {
    const auto seq = Sequence::open(events);
    stream = seq.events();
    ends = seq.timestamps();
  } else {
    stream = read_event_file(events);
  }
  if (options.timestamps) ends = read_timestamps(*options.timestamps);
  const auto& vopt = engine.voxel_options();
  if (ends.empty()) ends = consecutive_window_ends(stream, vopt.window_s);
  const auto reframe = engine.reframe_for_sensor(stream.height, stream.width);
  const auto windows = slice_windows(stream.events, ends, vopt.window_s);

  fs::create_directories(out / "depth");
  std::vector<double> ms;
  nlohmann::json index = nlohmann::json::array();
  const auto& mc = engine.model_config();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const auto t0 = std::chrono::steady_clock::now();
    const auto grid = voxelize(w, vopt.bins, stream.height, stream.width, vopt.origin);
    const auto depth = engine.predict(reframe.apply(voxel_tensor(grid)));
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());

    const int k = static_cast<int>(i);
    nlohmann::json meta = {{"t_start", w.t_start}, {"t_end", w.t_end}, {"events", w.events.size()}};
    write_float_array(out / "depth" / numbered(k, ".bin"), to_array(depth, meta));
    if (options.write_png) {
      write_rgb_png(out / "depth" / numbered(k, ".png"),
                    render_depth(depth, torch::ones_like(depth, torch::kBool), mc.d_min, mc.d_max));
    }
    index.push_back({{"window", k}, {"file", "depth/" + numbered(k, ".bin")}, {"t_end", w.t_end},
                     {"events", w.events.size()}});
  }

  InferReport rep;
  rep.windows = windows.size();
  if (!ms.empty()) {
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0;
    for (double v : ms) sum += v;
    rep.mean_ms = sum / static_cast<double>(ms.size());
    rep.median_ms = sorted[sorted.size() / 2];
    rep.p95_ms = sorted[std::min(sorted.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(sorted.size())))];
    rep.max_ms = sorted.back();
  }
  atomic_write(out / "timing.json", rep.to_json().dump(2) + "\n");
  atomic_write(out / "index.json", index.dump(2) + "\n");
  return rep;
}

// --- evaluate ----------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
  auto j = table.to_json();
  j["frames"] = frames;
  return j;
}

std::vector<fs::path> evaluation_sequences(const fs::path& dataset) {
  const auto splits = DatasetSplits::resolve(dataset);
  if (!splits.test.empty()) return splits.test;
  if (!splits.val.empty()) return splits.val;
  return splits.train;
}

EvalReport evaluate(const Predictor& predict, const fs::path& dataset, const EvalOptions& options,
                    const fs::path& out) {
  EvalReport rep;
  rep.table = make_table(options.alignment, options.cutoffs);
  SampleOptions sopt;
  sopt.voxel = options.voxel;
  sopt.depth = true;
  nlohmann::json panels = nlohmann::json::array();
  std::optional<CropRegion> crop_used;
  if (!out.empty()) fs::create_directories(out);

  for (const auto& dir : evaluation_sequences(dataset)) {
    const auto seq = Sequence::open(dir);
    if (!seq.has_depth()) throw Error(ErrorCategory::kIo, dir.string() + ": no ground-truth depth");
    for (int k : seq.indices()) {
      const auto sample = preprocess(seq.sample_at_frame(k, sopt), options.profile);
      const auto h = static_cast<int>(sample.gt_depth.size(0));
      const auto w = static_cast<int>(sample.gt_depth.size(1));
      const auto crop = options.crop.value_or(crop_for(options.profile, h, w));
      crop_used = crop;
      const auto pred = predict(sample);
      const auto m = mean_error_at_cutoffs(pred, sample.gt_depth, sample.gt_valid, options.cutoffs,
                                           options.alignment, crop);
      rep.table.add(m);
      ++rep.frames;

      if (!out.empty() && panels.size() < options.panels) {
        const fs::path pdir = out / "panels";
        fs::create_directories(pdir);
        char stem[48];
        std::snprintf(stem, sizeof(stem), "frame_%06zu", rep.frames - 1);
        const std::string s = stem;
        write_float_array(pdir / (s + "_events.bin"), to_array(sample.voxel.sum(0)));
        write_float_array(pdir / (s + "_pred.bin"), to_array(pred * m.scale));
        write_float_array(pdir / (s + "_gt.bin"), to_array(sample.gt_depth));
        write_float_array(pdir / (s + "_valid.bin"), to_array(sample.gt_valid));
        panels.push_back({{"sequence", dir.string()},
                          {"frame", k},
                          {"events", "panels/" + s + "_events.bin"},
                          {"pred", "panels/" + s + "_pred.bin"},
                          {"gt", "panels/" + s + "_gt.bin"},
                          {"valid", "panels/" + s + "_valid.bin"}});
      }
    }
  }
  if (rep.frames == 0) throw Error(ErrorCategory::kIo, "no evaluation frames under " + dataset.string());

  if (!out.empty()) {
    auto metrics = rep.to_json();
    metrics["profile"] = to_string(options.profile);
    if (crop_used) metrics["crop"] = crop_used->to_json();
    atomic_write(out / "metrics.txt", rep.table.to_text());
    atomic_write(out / "metrics.json", metrics.dump(2) + "\n");
    nlohmann::json results = {{"metrics", metrics}, {"panels", panels}};
    atomic_write(out / "results.json", results.dump(2) + "\n");
  }
  return rep;
}

EvalReport evaluate(InferenceEngine& engine, const fs::path& dataset, EvalOptions options,
                    const fs::path& out) {
  options.profile = engine.profile();
  options.voxel = engine.voxel_options();
  return evaluate([&](const TrainingSample& s) { return engine.predict(s.voxel); }, dataset, options,
                  out);
}

}  // namespace evdepth
