#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "evdepth/error.hpp"
#include "evdepth/inference.hpp"
#include "evdepth/metrics.hpp"
#include "evdepth/plot.hpp"
#include "evdepth/train.hpp"
#include "support.hpp"

using namespace evdepth;
namespace fs = std::filesystem;

namespace {

torch::Tensor map2(std::initializer_list<double> v) {
  return torch::tensor(std::vector<double>(v), torch::kDouble).view({2, 2});
}

// Mean absolute error after scaling by the lower-median ratio, plain loops.
double oracle_median_error(const torch::Tensor& pred, const torch::Tensor& gt, double cutoff) {
  std::vector<double> p, g;
  auto pa = pred.to(torch::kDouble).contiguous(), ga = gt.to(torch::kDouble).contiguous();
  for (int64_t i = 0; i < pa.numel(); ++i) {
    p.push_back(pa.data_ptr<double>()[i]);
    g.push_back(ga.data_ptr<double>()[i]);
  }
  auto lower_median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
  };
  const double s = lower_median(g) / lower_median(p);
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i] <= cutoff) sum += std::abs(p[i] * s - g[i]), ++n;
  }
  return sum / n;
}

struct CliResult {
  int status;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(EVDEPTH_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
  const int st = pclose(pipe);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

}  // namespace

// --- metrics ---------------------------------------------------------------------------

TEST(Metrics, WorkedExampleWithoutAlignment) {
  auto pred = map2({1, 2, 3, 40}), gt = map2({1, 3, 5, 35});
  auto valid = torch::ones({2, 2}, torch::kBool);
  auto m = mean_error_at_cutoffs(pred, gt, valid, {10, 30, 40, 0.5}, Alignment::kNone, CropRegion::full(2, 2));
  ASSERT_EQ(m.errors.size(), 4u);
  EXPECT_DOUBLE_EQ(*m.errors[0], 1.0);  // (0 + 1 + 2) / 3
  EXPECT_DOUBLE_EQ(*m.errors[1], 1.0);
  EXPECT_DOUBLE_EQ(*m.errors[2], 2.0);  // (0 + 1 + 2 + 5) / 4
  EXPECT_FALSE(m.errors[3].has_value());
  EXPECT_EQ(m.n_valid, (std::vector<int64_t>{3, 3, 4, 0}));
  EXPECT_DOUBLE_EQ(m.scale, 1.0);
}

TEST(Metrics, ConstantOffsetGivesOneEverywhere) {
  auto gt = torch::randint(1, 31, {10, 10}, torch::kDouble);
  auto m = mean_error_at_cutoffs(gt + 1.0, gt, torch::ones({10, 10}, torch::kBool), kDefaultCutoffs,
                                 Alignment::kNone, CropRegion::full(10, 10));
  for (const auto& e : m.errors) EXPECT_NEAR(*e, 1.0, 1e-12);
  auto exact = mean_error_at_cutoffs(gt, gt, torch::ones({10, 10}, torch::kBool), kDefaultCutoffs,
                                     Alignment::kMedian, CropRegion::full(10, 10));
  for (const auto& e : exact.errors) EXPECT_EQ(*e, 0.0);
}

TEST(Metrics, MedianAlignmentCancelsDoubling) {
  auto gt = torch::rand({10, 10}, torch::kDouble) * 29 + 1;
  auto m = mean_error_at_cutoffs(2 * gt, gt, torch::ones({10, 10}, torch::kBool), kDefaultCutoffs,
                                 Alignment::kMedian, CropRegion::full(10, 10));
  for (const auto& e : m.errors) EXPECT_EQ(*e, 0.0);
  EXPECT_DOUBLE_EQ(m.scale, 0.5);
}

TEST(Metrics, ValidCountsGrowWithCutoff) {
  for (int trial = 0; trial < 10; ++trial) {
    auto gt = torch::rand({12, 12}, torch::kDouble) * 40;
    auto valid = torch::rand({12, 12}) > 0.3;
    auto m = mean_error_at_cutoffs(gt, gt, valid, {5, 10, 20, 30, 50}, Alignment::kNone, CropRegion::full(12, 12));
    for (std::size_t c = 1; c < m.n_valid.size(); ++c) EXPECT_LE(m.n_valid[c - 1], m.n_valid[c]);
  }
}

TEST(Metrics, InvalidAndNonPositiveGroundTruthIgnored) {
  auto pred = map2({1, 2, 3, 4}), gt = map2({1, 0, std::nan(""), 8});
  auto valid = torch::tensor({true, true, true, false}).view({2, 2});
  auto m = mean_error_at_cutoffs(pred, gt, valid, {10}, Alignment::kNone, CropRegion::full(2, 2));
  EXPECT_EQ(m.n_valid[0], 1);
  EXPECT_DOUBLE_EQ(*m.errors[0], 0.0);
}

TEST(Metrics, MedianAlignmentMatchesOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto gt = torch::rand({9, 13}, torch::kDouble) * 40 + 1;
    auto pred = torch::rand({9, 13}, torch::kDouble) * 5 + 0.5;
    auto m = mean_error_at_cutoffs(pred, gt, torch::ones({9, 13}, torch::kBool), {10, 20, 30},
                                   Alignment::kMedian, CropRegion::full(9, 13));
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(*m.errors[c], oracle_median_error(pred, gt, 10.0 * (c + 1)), 1e-10);
  }
}

TEST(Metrics, MedianAlignmentIgnoresGlobalScale) {
  auto gt = torch::rand({16, 16}, torch::kDouble) * 30 + 1;
  auto pred = gt * (1 + 0.2 * torch::rand({16, 16}, torch::kDouble));
  auto valid = torch::ones({16, 16}, torch::kBool);
  auto base = mean_error_at_cutoffs(pred, gt, valid, kDefaultCutoffs, Alignment::kMedian, CropRegion::full(16, 16));
  for (double k : {0.01, 0.5, 7.0, 300.0}) {
    auto m = mean_error_at_cutoffs(pred * k, gt, valid, kDefaultCutoffs, Alignment::kMedian, CropRegion::full(16, 16));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(*m.errors[c], *base.errors[c], 1e-9) << k;
  }
}

TEST(Metrics, ErrorGrowsWithPerturbation) {
  auto gt = torch::rand({16, 16}, torch::kDouble) * 25 + 1;
  auto noise = torch::randn({16, 16}, torch::kDouble);
  auto valid = torch::ones({16, 16}, torch::kBool);
  double last = -1;
  for (double eps : {0.0, 0.05, 0.1, 0.2}) {
    auto m = mean_error_at_cutoffs(gt * (1 + eps * noise.abs()), gt, valid, {30}, Alignment::kNone,
                                   CropRegion::full(16, 16));
    EXPECT_GT(*m.errors[0], last);
    last = *m.errors[0];
  }
}

TEST(Metrics, PixelsOutsideCropAreIgnored) {
  auto gt = torch::rand({12, 10}, torch::kDouble) * 20 + 1;
  auto pred = gt * 1.1;
  auto valid = torch::ones({12, 10}, torch::kBool);
  const CropRegion crop{2, 1, 6, 7};
  auto base = mean_error_at_cutoffs(pred, gt, valid, kDefaultCutoffs, Alignment::kMedian, crop);
  auto poisoned = pred.clone();
  poisoned.narrow(0, 8, 4).fill_(1e6);
  poisoned.narrow(1, 0, 1).fill_(-1e6);
  auto m = mean_error_at_cutoffs(poisoned, gt, valid, kDefaultCutoffs, Alignment::kMedian, crop);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(*m.errors[c], *base.errors[c]);
  EXPECT_EQ(crop_for(Profile::kMvsecLike, 288, 352), (CropRegion{0, 0, 200, 346}));
  EXPECT_EQ(crop_for(Profile::kDsecLike, 320, 640), CropRegion::full(320, 640));
}

TEST(MetricsTable, MeanOfPerFrameMeans) {
  auto t = make_table(Alignment::kNone, {10, 20});
  auto valid = torch::ones({2, 2}, torch::kBool);
  t.add(mean_error_at_cutoffs(map2({2, 2, 2, 2}), map2({1, 1, 1, 1}), valid, {10, 20}, Alignment::kNone,
                              CropRegion::full(2, 2)));
  t.add(mean_error_at_cutoffs(map2({4, 1, 1, 1}), map2({1, 15, 15, 15}), valid, {10, 20}, Alignment::kNone,
                              CropRegion::full(2, 2)));
  auto means = t.means();
  EXPECT_DOUBLE_EQ(*means[0], (1.0 + 3.0) / 2);
  EXPECT_DOUBLE_EQ(*means[1], (1.0 + (3.0 + 14 * 3) / 4) / 2);
  EXPECT_EQ(t.frames, (std::vector<int64_t>{2, 2}));
  EXPECT_NE(t.to_text().find("10"), std::string::npos);
  EXPECT_EQ(t.to_json()["alignment"], to_string(Alignment::kNone));
}

TEST(Metrics, AlignmentNames) {
  EXPECT_EQ(alignment_from_string("median"), Alignment::kMedian);
  EXPECT_EQ(alignment_from_string("none"), Alignment::kNone);
  EXPECT_THROW(alignment_from_string("mean"), Error);
}

// --- evaluation and inference -----------------------------------------------------------

namespace {

struct EvalData {
  evtest::TempDir dir{"evdepth-eval"};
  EvalData() {
    auto cfg = evtest::small_scene(6);
    cfg.test_frames = 7;
    synth_scene(cfg, dir.path());
  }
};

EvalData& eval_data() {
  static EvalData d;
  return d;
}

}  // namespace

TEST(Evaluate, GroundTruthPredictorScoresZero) {
  evtest::TempDir out;
  EvalOptions opts;
  auto r = evaluate([](const TrainingSample& s) { return s.gt_depth; }, eval_data().dir.path(), opts, out.path());
  EXPECT_EQ(r.frames, 5u);
  for (auto m : r.table.means()) {
    ASSERT_TRUE(m.has_value());
    EXPECT_LT(*m, 1e-6);
  }
  for (const char* name : {"metrics.txt", "metrics.json", "results.json"})
    EXPECT_TRUE(fs::exists(out / name)) << name;
  auto results = nlohmann::json::parse(std::ifstream(out / "results.json"));
  EXPECT_EQ(results["panels"].size(), 3u);
  EXPECT_TRUE(fs::exists(out.path() / results["panels"][0]["pred"].get<std::string>()));
}

TEST(Evaluate, DegradedPredictorMatchesClosedForm) {
  // gt x 1.1 without alignment: per-frame error is 0.1 x mean gt below the cutoff
  EvalOptions none;
  none.alignment = Alignment::kNone;
  none.cutoffs = {1000.0};
  const auto& data = eval_data().dir.path();
  auto r = evaluate([](const TrainingSample& s) { return s.gt_depth * 1.1; }, data, none, {});
  auto oracle = evaluate([](const TrainingSample& s) { return s.gt_depth * 2.0; }, data, none, {});
  // gt x 2 gives exactly the per-frame mean gt
  EXPECT_NEAR(*r.table.means()[0], 0.1 * *oracle.table.means()[0], 1e-5);
}

TEST(Evaluate, AlignmentRemovesGlobalScaleOnly) {
  EvalOptions none;
  none.alignment = Alignment::kNone;
  EvalOptions median;
  auto scaled = [](const TrainingSample& s) { return s.gt_depth * 1.3; };
  auto distorted = [](const TrainingSample& s) { return s.gt_depth.pow(1.2); };
  auto constant = [](const TrainingSample& s) { return torch::full_like(s.gt_depth, 2.0); };
  const auto& data = eval_data().dir.path();
  EXPECT_GT(*evaluate(scaled, data, none, {}).table.means()[0], 0.1);
  EXPECT_LT(*evaluate(scaled, data, median, {}).table.means()[0], 1e-5);
  const double d = *evaluate(distorted, data, median, {}).table.means()[0];
  const double c = *evaluate(constant, data, median, {}).table.means()[0];
  EXPECT_GT(d, 1e-3);
  EXPECT_GT(c, d);
}

TEST(Evaluate, MissingDepthIsAnIoError) {
  evtest::TempDir dir;
  synth_scene(evtest::small_scene(5), dir.path());
  fs::remove_all(dir / "depth");
  try {
    evaluate([](const TrainingSample& s) { return torch::ones({32, 64}); }, dir.path(), {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kIo);
  }
}

namespace {

fs::path fresh_checkpoint(const fs::path& dir) {
  TrainConfig cfg;
  cfg.profile = Profile::kNone;
  Trainer t(cfg, model_config_for(cfg, 1, 32, 64));
  save_checkpoint(dir / "init.ckpt", t.to_checkpoint());
  return dir / "init.ckpt";
}

}  // namespace

TEST(Infer, WritesOneDepthMapPerFrameDeterministically) {
  evtest::TempDir ck, a, b;
  auto engine = InferenceEngine::load(fresh_checkpoint(ck.path()));
  EXPECT_EQ(engine.voxel_options().bins, 5);
  const auto seq = evaluation_sequences(eval_data().dir.path()).front();
  auto report = infer(engine, seq, a.path());
  EXPECT_EQ(report.windows, 7u);
  infer(engine, seq, b.path());
  for (int k = 0; k < 7; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "depth/%06d.bin", k);
    ASSERT_TRUE(fs::exists(a / name)) << name;
    std::ifstream fa(a / name, std::ios::binary), fb(b / name, std::ios::binary);
    EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(fa), {}, std::istreambuf_iterator<char>(fb)));
  }
  EXPECT_TRUE(fs::exists(a / "timing.json"));
}

TEST(Infer, SensorSizeMustMatchProfile) {
  evtest::TempDir ck;
  TrainConfig cfg;
  Trainer t(cfg, model_config_for(cfg, 1, 288, 352));
  save_checkpoint(ck / "mvsec.ckpt", t.to_checkpoint());
  auto engine = InferenceEngine::load(ck / "mvsec.ckpt");
  EXPECT_EQ(engine.profile(), Profile::kMvsecLike);
  EXPECT_NO_THROW(engine.reframe_for_sensor(260, 346));
  try {
    engine.reframe_for_sensor(32, 64);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kShape);
  }
}

TEST(Infer, ConsecutiveWindowsCoverTheStream) {
  EventStream s;
  for (int i = 0; i <= 10; ++i) s.events.push_back({0.5 + 0.012 * i, 0, 0, 1});
  auto ends = consecutive_window_ends(s, 0.05);
  ASSERT_FALSE(ends.empty());
  EXPECT_GE(ends.back(), s.events.back().t);
  for (std::size_t i = 1; i < ends.size(); ++i) EXPECT_NEAR(ends[i] - ends[i - 1], 0.05, 1e-12);
}

// --- plots ---------------------------------------------------------------------------

TEST(Plot, EventColours) {
  EXPECT_EQ(event_color(1.0f, 1.0f), (Rgb{255, 0, 0}));
  EXPECT_EQ(event_color(-1.0f, 1.0f), (Rgb{0, 0, 255}));
  EXPECT_EQ(event_color(0.0f, 1.0f), (Rgb{255, 255, 255}));
  auto sum = torch::zeros({4, 5});
  sum[1][2] = 3.0;
  auto rgb = render_events(sum);
  EXPECT_EQ(rgb.sizes(), (std::vector<int64_t>{4, 5, 3}));
  EXPECT_EQ(rgb[1][2][0].item<int>(), 255);
  EXPECT_LT(rgb[1][2][1].item<int>(), 255);
  EXPECT_EQ(rgb[0][0][1].item<int>(), 255);
}

TEST(Plot, InvalidDepthIsBlack) {
  auto depth = torch::full({3, 3}, 5.0);
  auto valid = torch::ones({3, 3}, torch::kBool);
  valid[1][1] = false;
  auto rgb = render_depth(depth, valid, 0.1, 100.0);
  EXPECT_EQ(rgb[1][1].sum().item<int>(), 0);
  EXPECT_GT(rgb[0][0].sum().item<int>(), 0);
}

TEST(Plot, NothingToPlotWritesNothing) {
  evtest::TempDir in, out;
  EXPECT_TRUE(plot_all({in.path()}, out / "plots").empty());
}

TEST(Plot, PanelsAndLossCurveFromRunOutputs) {
  evtest::TempDir ev, plots;
  evaluate([](const TrainingSample& s) { return s.gt_depth * 1.1; }, eval_data().dir.path(), {}, ev.path());
  {
    std::ofstream log(ev / "log.jsonl");
    for (int s = 1; s <= 5; ++s)
      log << nlohmann::json{{"type", "train"}, {"step", s}, {"epoch", 0}, {"loss", 1.0 / s}}.dump() << "\n";
    log << nlohmann::json{{"type", "val"}, {"step", 5}, {"epoch", 0}, {"loss", 0.3}}.dump() << "\n";
  }
  auto files = plot_all({ev.path()}, plots.path());
  EXPECT_EQ(files.size(), 4u);  // three panels and one loss curve
  for (const auto& f : files) EXPECT_GT(fs::file_size(f), 0u) << f;
}

// --- command line ------------------------------------------------------------------------

TEST(Cli, ErrorsPrintOneLineAndMapToExitCodes) {
  evtest::TempDir dir;
  auto missing = run_cli("voxelize --events " + (dir / "none.bin").string() + " --out " + (dir / "o").string());
  EXPECT_EQ(missing.status, 3);
  EXPECT_EQ(missing.output.rfind("error[io]: ", 0), 0u) << missing.output;
  EXPECT_EQ(std::count(missing.output.begin(), missing.output.end(), '\n'), 1);

  auto usage = run_cli("frobnicate");
  EXPECT_EQ(usage.status, 2);

  {
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"epochs": 2, "wings": 3})";
  }
  auto config = run_cli("train --config " + (dir / "bad.json").string() + " --data " + dir.path().string() +
                        " --out " + (dir / "run").string());
  EXPECT_EQ(config.status, 6) << config.output;
  EXPECT_NE(config.output.find("wings"), std::string::npos);
}

TEST(Cli, ShapeMismatchExitCode) {
  evtest::TempDir ck, out;
  auto ckpt = fresh_checkpoint(ck.path());
  const auto seq = evaluation_sequences(eval_data().dir.path()).front();
  auto r = run_cli("--profile mvsec-like infer --checkpoint " + ckpt.string() + " --events " + seq.string() +
                   " --out " + out.path().string());
  EXPECT_EQ(r.status, 5) << r.output;
  EXPECT_EQ(r.output.rfind("error[shape]: ", 0), 0u) << r.output;
}
