#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "evdepth/error.hpp"
#include "evdepth/train.hpp"
#include "support.hpp"

using namespace evdepth;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorCategory category_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  ADD_FAILURE() << "no evdepth::Error thrown";
  return ErrorCategory::kUsage;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.profile = Profile::kNone;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.lr_drop_epoch = 1;
  cfg.seed = 9;
  return cfg;
}

struct Fixture {
  evtest::TempDir dir{"evdepth-train"};
  std::vector<Batch> batches;

  explicit Fixture(const TrainConfig& cfg, int frames = 8) {
    synth_scene(evtest::small_scene(frames), dir.path());
    TrainingSet set({dir.path()}, cfg);
    for (std::size_t i = 0; i + 1 < set.size(); i += 2)
      batches.push_back(collate({set.get(i, std::nullopt), set.get(i + 1, std::nullopt)}));
  }
};

ModelConfig model_for(const TrainConfig& cfg) {
  return model_config_for(cfg, cfg.ablation == Ablation::kEventConsistency ? cfg.bins : 1, 32, 64);
}

bool same_parameters(Trainer& a, Trainer& b) {
  auto pa = a.depth_net()->parameters(), pb = b.depth_net()->parameters();
  auto qa = a.pose_net()->parameters(), qb = b.pose_net()->parameters();
  pa.insert(pa.end(), qa.begin(), qa.end());
  pb.insert(pb.end(), qb.begin(), qb.end());
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!pa[i].equal(pb[i])) return false;
  return true;
}

}  // namespace

TEST(TrainConfig, Defaults) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.epochs, 10);
  EXPECT_EQ(cfg.batch_size, 8);
  EXPECT_DOUBLE_EQ(cfg.lr_initial, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.lr_final, 1e-5);
  EXPECT_EQ(cfg.lr_drop_epoch, 8);
  EXPECT_DOUBLE_EQ(cfg.betas[0], 0.9);
  EXPECT_DOUBLE_EQ(cfg.betas[1], 0.999);
  EXPECT_EQ(cfg.scales, 4);
  EXPECT_DOUBLE_EQ(cfg.d_min, 0.1);
  EXPECT_DOUBLE_EQ(cfg.d_max, 100.0);
  EXPECT_EQ(cfg.bins, 5);
  EXPECT_DOUBLE_EQ(cfg.window_s, 0.05);
  EXPECT_EQ(cfg.ablation, Ablation::kCrossModal);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig cfg;
  for (int e = 0; e < 8; ++e) EXPECT_DOUBLE_EQ(lr_schedule(e, cfg), 1e-4) << e;
  for (int e = 8; e < 10; ++e) EXPECT_DOUBLE_EQ(lr_schedule(e, cfg), 1e-5) << e;
  EXPECT_EQ(category_of([&] { lr_schedule(10, cfg); }), ErrorCategory::kRange);
  EXPECT_EQ(category_of([&] { lr_schedule(-1, cfg); }), ErrorCategory::kRange);
}

TEST(TrainConfig, JsonRoundTripAndRejections) {
  auto cfg = small_config();
  cfg.ablation = Ablation::kBaselineSkip;
  cfg.profile = Profile::kDsecLike;
  auto j = cfg.to_json();
  EXPECT_EQ(TrainConfig::from_json(j).to_json(), j);
  auto bad = j;
  bad["learning_rate"] = 0.1;
  EXPECT_EQ(category_of([&] { TrainConfig::from_json(bad); }), ErrorCategory::kConfig);
  bad = j;
  bad["batch_size"] = "eight";
  EXPECT_EQ(category_of([&] { TrainConfig::from_json(bad); }), ErrorCategory::kConfig);
  bad = j;
  bad["batch_size"] = 0;
  EXPECT_EQ(category_of([&] { TrainConfig::from_json(bad); }), ErrorCategory::kConfig);
  EXPECT_EQ(TrainConfig::from_json(nlohmann::json::object()).to_json(), TrainConfig{}.to_json());
}

TEST(TrainConfig, AblationNames) {
  for (auto a : {Ablation::kCrossModal, Ablation::kEventConsistency, Ablation::kBaselineSkip})
    EXPECT_EQ(ablation_from_string(to_string(a)), a);
  EXPECT_THROW(ablation_from_string("stereo"), Error);
}

TEST(ModelConfigFor, AblationsSelectInputsAndDecoder) {
  auto cfg = small_config();
  EXPECT_EQ(model_config_for(cfg, 1, 32, 64).skip, SkipMode::kMultiScale);
  cfg.ablation = Ablation::kBaselineSkip;
  EXPECT_EQ(model_config_for(cfg, 1, 32, 64).skip, SkipMode::kBaseline);
  cfg.ablation = Ablation::kEventConsistency;
  EXPECT_EQ(model_config_for(cfg, 1, 32, 64).frame_channels, cfg.bins);
}

TEST(VoxelToImage, SquashesIntoUnitInterval) {
  auto v = torch::randn({5, 8, 8}) * 10;
  auto img = voxel_to_image(v);
  EXPECT_GE(img.min().item<double>(), 0.0);
  EXPECT_LE(img.max().item<double>(), 1.0);
  EXPECT_NEAR(voxel_to_image(torch::zeros({1})).item<double>(), 0.5, 1e-7);
}

TEST(Adam, MatchesScalarOracle) {
  auto p = torch::tensor({1.0, -2.0, 0.5}, torch::kDouble).requires_grad_(true);
  Adam opt({p}, {0.9, 0.999}, 1e-8);
  std::vector<double> x = {1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    (p * p * p).sum().backward();
    opt.step(0.1);
    for (int i = 0; i < 3; ++i) {
      const double g = 3 * x[i] * x[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i].item<double>(), x[i], 1e-12);
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Collate, StacksUniformSamples) {
  auto cfg = small_config();
  Fixture fx(cfg, 6);
  ASSERT_FALSE(fx.batches.empty());
  const auto& b = fx.batches[0];
  EXPECT_EQ(b.voxels.sizes(), (std::vector<int64_t>{2, 5, 32, 64}));
  EXPECT_EQ(b.target.sizes(), (std::vector<int64_t>{2, 1, 32, 64}));
  EXPECT_EQ(b.intrinsics.sizes(), (std::vector<int64_t>{2, 3, 3}));
  EXPECT_EQ(b.frame_indices, (std::vector<int>{1, 2}));
}

TEST(Trainer, RepeatedStepsOnOneBatchReduceLoss) {
  auto cfg = small_config();
  Fixture fx(cfg);
  Trainer t(cfg, model_for(cfg));
  const auto& batch = fx.batches[0];
  std::vector<double> trace{t.compute_loss(batch).total.item<double>()};
  for (int s = 0; s < 12; ++s) {
    t.train_step(batch);
    trace.push_back(t.compute_loss(batch).total.item<double>());
  }
  std::ostringstream os;
  for (double v : trace) os << v << " ";
  EXPECT_LT(trace.back(), trace.front()) << os.str();
  EXPECT_EQ(t.step(), 12);
  EXPECT_EQ(t.loss_history().size(), 12u);
}

TEST(Trainer, SameSeedSameTrajectory) {
  set_deterministic(true);
  auto cfg = small_config();
  Fixture fx(cfg);
  Trainer a(cfg, model_for(cfg)), b(cfg, model_for(cfg));
  for (int s = 0; s < 2; ++s) {
    const auto& batch = fx.batches[s % fx.batches.size()];
    EXPECT_EQ(a.train_step(batch).total.item<double>(), b.train_step(batch).total.item<double>());
  }
  EXPECT_TRUE(same_parameters(a, b));
  set_deterministic(false);
}

TEST(Trainer, ResumeContinuesIdentically) {
  set_deterministic(true);
  auto cfg = small_config();
  Fixture fx(cfg);
  evtest::TempDir dir;
  Trainer straight(cfg, model_for(cfg));
  for (int s = 0; s < 3; ++s) straight.train_step(fx.batches[s % fx.batches.size()]);

  Trainer first(cfg, model_for(cfg));
  first.train_step(fx.batches[0]);
  save_checkpoint(dir / "mid.ckpt", first.to_checkpoint());
  Trainer resumed(cfg, model_for(cfg));
  resumed.train_step(fx.batches[2 % fx.batches.size()]);  // state that restore must overwrite
  resumed.restore(load_checkpoint(dir / "mid.ckpt"));
  EXPECT_EQ(resumed.step(), 1);
  for (int s = 1; s < 3; ++s) resumed.train_step(fx.batches[s % fx.batches.size()]);
  EXPECT_TRUE(same_parameters(straight, resumed));
  EXPECT_EQ(straight.loss_history(), resumed.loss_history());
  set_deterministic(false);
}

TEST(Trainer, ResumeRejectsDifferentConfiguration) {
  auto cfg = small_config();
  Trainer t(cfg, model_for(cfg));
  auto ck = t.to_checkpoint();
  auto lr = cfg;
  lr.lr_initial = 3e-4;
  Trainer a(lr, model_for(lr));
  EXPECT_EQ(category_of([&] { a.restore(ck); }), ErrorCategory::kConfig);
  auto abl = cfg;
  abl.ablation = Ablation::kBaselineSkip;
  Trainer b(abl, model_for(abl));
  EXPECT_EQ(category_of([&] { b.restore(ck); }), ErrorCategory::kConfig);
}

TEST(Trainer, NonFiniteInputIsRejectedWithoutUpdating) {
  auto cfg = small_config();
  Fixture fx(cfg, 5);
  Trainer t(cfg, model_for(cfg));
  auto batch = fx.batches[0];
  batch.voxels = batch.voxels.clone();
  batch.voxels[0][0][3][3] = std::numeric_limits<float>::quiet_NaN();
  std::vector<torch::Tensor> before;
  for (const auto& p : t.depth_net()->parameters()) before.push_back(p.clone());
  for (const auto& b : t.depth_net()->buffers()) before.push_back(b.clone());
  try {
    t.train_step(batch);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kNumeric);
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  EXPECT_EQ(t.step(), 0);
  auto after = t.depth_net()->parameters();
  for (const auto& b : t.depth_net()->buffers()) after.push_back(b);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(after[i].equal(before[i]));
}

TEST(Trainer, EventConsistencyUsesNeighbourVoxels) {
  auto cfg = small_config();
  cfg.ablation = Ablation::kEventConsistency;
  Fixture fx(cfg);
  const auto& b = fx.batches[0];
  ASSERT_TRUE(b.voxel_prev.defined());
  EXPECT_EQ(b.voxel_prev.sizes(), b.voxels.sizes());
  Trainer t(cfg, model_for(cfg));
  auto l = t.train_step(b);
  EXPECT_TRUE(std::isfinite(l.total.item<double>()));
}

TEST(Trainer, PredictedPosesHaveSixDof) {
  auto cfg = small_config();
  Fixture fx(cfg, 5);
  Trainer t(cfg, model_for(cfg));
  auto [to_prev, to_next] = t.predict_poses(fx.batches[0]);
  EXPECT_EQ(to_prev.sizes(), (std::vector<int64_t>{2, 6}));
  EXPECT_EQ(to_next.sizes(), (std::vector<int64_t>{2, 6}));
}

TEST(Fit, WritesLogsCheckpointsAndResumes) {
  auto cfg = small_config();
  cfg.max_steps = 3;
  evtest::TempDir data, run;
  synth_scene(evtest::small_scene(8), data.path());
  FitOptions opts;
  opts.deterministic = true;
  auto result = fit(cfg, data.path(), run.path(), opts);
  EXPECT_EQ(result.steps, 3);
  for (const char* name : {"log.jsonl", "config.json", "summary.json", "final.ckpt", "last.ckpt"})
    EXPECT_TRUE(fs::exists(run / name)) << name;

  std::ifstream log(run / "log.jsonl");
  std::string line;
  int train_records = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] == "train") {
      ++train_records;
      for (const char* key : {"step", "epoch", "lr", "loss", "per_scale", "mask_fraction"})
        EXPECT_TRUE(j.contains(key)) << key;
      EXPECT_EQ(j["per_scale"].size(), 4u);
    }
  }
  EXPECT_EQ(train_records, 3);

  auto more = cfg;
  more.max_steps = 5;
  opts.resume = run / "last.ckpt";
  auto resumed = fit(more, data.path(), run.path(), opts);
  EXPECT_EQ(resumed.steps, 5);

  auto other = cfg;
  other.seed = 10;
  EXPECT_EQ(category_of([&] { fit(other, data.path(), run.path(), opts); }), ErrorCategory::kConfig);
}

TEST(Fit, TooFewSamplesForOneBatch) {
  auto cfg = small_config();
  cfg.batch_size = 8;
  evtest::TempDir data, run;
  synth_scene(evtest::small_scene(5), data.path());
  EXPECT_THROW(fit(cfg, data.path(), run.path()), Error);
}
