// Command-line front end: voxelize, synth, train, infer, evaluate, plot.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evdepth/array_io.hpp"
#include "evdepth/data.hpp"
#include "evdepth/error.hpp"
#include "evdepth/events.hpp"
#include "evdepth/inference.hpp"
#include "evdepth/metrics.hpp"
#include "evdepth/plot.hpp"
#include "evdepth/train.hpp"

namespace fs = std::filesystem;
using namespace evdepth;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> profile;

  std::optional<Profile> parsed_profile() const {
    if (!profile) return std::nullopt;
    return profile_from_string(*profile);
  }
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw Error(ErrorCategory::kUsage, "bad number '" + item + "' in '" + text + "'");
    }
  }
  return out;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

// --- voxelize --------------------------------------------------------------------

struct VoxelizeArgs {
  fs::path events, out;
  std::optional<fs::path> timestamps;
  int bins = kDefaultBins;
  double window = kDefaultWindowSeconds;
  std::string origin = "window-start";
};

void run_voxelize(const VoxelizeArgs& a) {
  VoxelOptions opts{a.bins, a.window, TimeOrigin::kWindowStart};
  if (a.origin == "first-event") {
    opts.origin = TimeOrigin::kFirstEvent;
  } else if (a.origin != "window-start") {
    throw Error(ErrorCategory::kUsage, "--origin must be window-start or first-event");
  }
  EventStream stream;
  std::vector<double> ends;
  if (fs::is_directory(a.events)) {
    const auto seq = Sequence::open(a.events);
    stream = seq.events();
    ends = seq.timestamps();
  } else {
    stream = read_event_file(a.events);
  }
  if (a.timestamps) ends = read_timestamps(*a.timestamps);
  if (ends.empty()) ends = consecutive_window_ends(stream, opts.window_s);
  const auto windows = slice_windows(stream.events, ends, opts.window_s);
  fs::create_directories(a.out);
  std::size_t total = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto g = voxelize(windows[i], opts.bins, stream.height, stream.width, opts.origin);
    FloatArray arr;
    arr.shape = {g.bins, g.height, g.width};
    arr.data = g.data;
    arr.meta = {{"t_start", g.t_start}, {"t_end", g.t_end}, {"events", g.event_count}};
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.bin", i);
    write_float_array(a.out / name, arr);
    total += g.event_count;
  }
  print_json({{"windows", windows.size()}, {"events", total}, {"bins", opts.bins},
              {"window_s", opts.window_s}});
}

// --- synth -----------------------------------------------------------------------

struct SynthArgs {
  std::optional<fs::path> config;
  fs::path out;
  std::optional<int> frames, val_frames, test_frames;
  std::optional<double> threshold;
};

void run_synth(const SynthArgs& a, const Globals& g) {
  SceneConfig cfg;
  if (a.config) cfg = SceneConfig::from_json(read_json(*a.config));
  if (g.seed) cfg.seed = *g.seed;
  if (a.frames) cfg.num_frames = *a.frames;
  if (a.val_frames) cfg.val_frames = *a.val_frames;
  if (a.test_frames) cfg.test_frames = *a.test_frames;
  if (a.threshold) cfg.contrast_threshold = *a.threshold;
  const auto summary = synth_scene(cfg, a.out);
  if (summary.contains("warnings")) {
    for (const auto& w : summary.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
  }
  print_json(summary);
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path data, out;
  std::optional<fs::path> resume, encoder_init;
  std::optional<std::string> ablation;
  bool deterministic = false;
};

void run_train(const TrainArgs& a, const Globals& g) {
  TrainConfig cfg;
  if (a.config) cfg = TrainConfig::load(*a.config);
  if (g.seed) cfg.seed = *g.seed;
  if (auto p = g.parsed_profile()) cfg.profile = *p;
  if (a.ablation) cfg.ablation = ablation_from_string(*a.ablation);
  cfg.validate();
  FitOptions opts;
  opts.resume = a.resume;
  opts.encoder_init = a.encoder_init;
  opts.deterministic = a.deterministic || g.deterministic;
  opts.on_step = [](const nlohmann::json& rec) {
    if (rec.value("type", "") == "val") {
      std::cerr << "epoch " << rec.value("epoch", 0) << " val loss " << rec.value("loss", 0.0) << "\n";
    } else if (rec.value("step", 0) % 10 == 0) {
      std::cerr << "step " << rec.value("step", 0) << " loss " << rec.value("loss", 0.0) << "\n";
    }
  };
  const auto r = fit(cfg, a.data, a.out, opts);
  print_json({{"steps", r.steps}, {"final_checkpoint", r.final_checkpoint.string()},
              {"last_loss", r.losses.empty() ? nlohmann::json() : nlohmann::json(r.losses.back())}});
}

// --- infer / evaluate / plot -----------------------------------------------------------

struct InferArgs {
  fs::path checkpoint, events, out;
  std::optional<fs::path> timestamps;
  bool png = false;
};

void run_infer(const InferArgs& a, const Globals& g) {
  set_deterministic(g.deterministic);
  auto engine = InferenceEngine::load(a.checkpoint, g.parsed_profile());
  InferOptions opts;
  opts.timestamps = a.timestamps;
  opts.write_png = a.png;
  print_json(infer(engine, a.events, a.out, opts).to_json());
}

struct EvaluateArgs {
  fs::path checkpoint, data, out;
  std::string cutoffs = "10,20,30";
  std::string alignment = "median";
  std::optional<std::string> crop;
};

void run_evaluate(const EvaluateArgs& a, const Globals& g) {
  set_deterministic(g.deterministic);
  auto engine = InferenceEngine::load(a.checkpoint, g.parsed_profile());
  EvalOptions opts;
  opts.cutoffs = parse_list(a.cutoffs);
  opts.alignment = alignment_from_string(a.alignment);
  if (a.crop) {
    const auto v = parse_list(*a.crop);
    if (v.size() != 4) throw Error(ErrorCategory::kUsage, "--crop expects top,left,height,width");
    opts.crop = CropRegion{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
                           static_cast<int>(v[3])};
  }
  const auto rep = evaluate(engine, a.data, opts, a.out);
  std::cout << rep.table.to_text();
}

struct PlotArgs {
  std::vector<fs::path> results;
  fs::path out;
};

void run_plot(const PlotArgs& a) {
  const auto files = plot_all(a.results, a.out);
  for (const auto& f : files) std::cout << f.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera monocular depth toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed for synth and train");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, deterministic kernels");
  app.add_option("--profile", g.profile, "Preprocessing profile: mvsec-like, dsec-like or none");

  VoxelizeArgs vox;
  auto* c_vox = app.add_subcommand("voxelize", "Slice an event stream into voxel grids");
  c_vox->add_option("--events", vox.events, "Event file or sequence directory")->required();
  c_vox->add_option("--out", vox.out, "Output directory")->required();
  c_vox->add_option("--timestamps", vox.timestamps, "Window end times, one per line");
  c_vox->add_option("--bins", vox.bins, "Temporal bins");
  c_vox->add_option("--window", vox.window, "Window length in seconds");
  c_vox->add_option("--origin", vox.origin, "window-start or first-event");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Render a synthetic dataset with ground truth");
  c_syn->add_option("--config", syn.config, "Scene JSON");
  c_syn->add_option("--out", syn.out, "Output directory")->required();
  c_syn->add_option("--frames", syn.frames, "Training frames");
  c_syn->add_option("--val-frames", syn.val_frames, "Validation frames");
  c_syn->add_option("--test-frames", syn.test_frames, "Test frames");
  c_syn->add_option("--threshold", syn.threshold, "Contrast threshold");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train depth and pose networks");
  c_tr->add_option("--config", tr.config, "Training JSON");
  c_tr->add_option("--data", tr.data, "Dataset root")->required();
  c_tr->add_option("--out", tr.out, "Run directory")->required();
  c_tr->add_option("--resume", tr.resume, "Checkpoint to resume from");
  c_tr->add_option("--encoder-init", tr.encoder_init, "Checkpoint whose depth encoder seeds the run");
  c_tr->add_option("--ablation", tr.ablation, "cross-modal, event-consistency or baseline-skip");
  c_tr->add_flag("--deterministic", tr.deterministic, "Single-threaded, deterministic kernels");

  InferArgs inf;
  auto* c_inf = app.add_subcommand("infer", "Predict depth for event windows");
  c_inf->add_option("--checkpoint", inf.checkpoint, "Trained checkpoint")->required();
  c_inf->add_option("--events", inf.events, "Event file or sequence directory")->required();
  c_inf->add_option("--out", inf.out, "Output directory")->required();
  c_inf->add_option("--timestamps", inf.timestamps, "Window end times, one per line");
  c_inf->add_flag("--png", inf.png, "Also write colour-mapped depth images");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Depth error at cutoff distances");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint")->required();
  c_ev->add_option("--data", ev.data, "Dataset root with ground-truth depth")->required();
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_option("--cutoffs", ev.cutoffs, "Comma-separated cutoff depths");
  c_ev->add_option("--alignment", ev.alignment, "median or none");
  c_ev->add_option("--crop", ev.crop, "top,left,height,width");

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot", "Render loss curves and depth panels");
  c_pl->add_option("--results", pl.results, "results.json, log.jsonl or run directories");
  c_pl->add_option("--out", pl.out, "Output directory")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << one_line(e.what()) << "\n";
    return exit_code(ErrorCategory::kUsage);
  }

  try {
    if (*c_vox) run_voxelize(vox);
    if (*c_syn) run_synth(syn, g);
    if (*c_tr) run_train(tr, g);
    if (*c_inf) run_infer(inf, g);
    if (*c_ev) run_evaluate(ev, g);
    if (*c_pl) run_plot(pl);
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "]: " << one_line(e.what()) << "\n";
    return exit_code(e.category());
  } catch (const c10::Error& e) {
    std::cerr << "error[numeric]: " << one_line(e.what_without_backtrace()) << "\n";
    return exit_code(ErrorCategory::kNumeric);
  } catch (const std::exception& e) {
    std::cerr << "error[io]: " << one_line(e.what()) << "\n";
    return exit_code(ErrorCategory::kIo);
  }
  return 0;
}
