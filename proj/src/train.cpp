#include "evdepth/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <ATen/Context.h>

#include "evdepth/array_io.hpp"
#include "evdepth/error.hpp"
#include "evdepth/geometry.hpp"

namespace evdepth {

namespace fs = std::filesystem;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kCrossModal: return "cross-modal";
    case Ablation::kEventConsistency: return "event-consistency";
    case Ablation::kBaselineSkip: return "baseline-skip";
  }
  return "cross-modal";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "cross-modal") return Ablation::kCrossModal;
  if (s == "event-consistency") return Ablation::kEventConsistency;
  if (s == "baseline-skip") return Ablation::kBaselineSkip;
  throw Error(ErrorCategory::kConfig, "unknown ablation '" + s + "'");
}

// --- config ------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCategory::kConfig, m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (lr_drop_epoch < 0 || lr_drop_epoch >= epochs) fail("lr_drop_epoch must lie in [0, epochs)");
  if (!(lr_initial > 0) || !(lr_final > 0)) fail("learning rates must be positive");
  if (!(betas[0] >= 0 && betas[0] < 1 && betas[1] >= 0 && betas[1] < 1)) fail("betas must lie in [0, 1)");
  if (scales < 1 || scales > 4) fail("scales must lie in [1, 4]");
  if (!(d_min > 0) || !(d_max > d_min)) fail("depth range must satisfy 0 < d_min < d_max");
  if (bins < 2) fail("bins must be >= 2");
  if (!(window_s > 0)) fail("window_s must be positive");
  if (max_steps < 0 || checkpoint_every < 0) fail("step counts must be non-negative");
  if (smoothness_weight < 0) fail("smoothness_weight must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_initial", lr_initial},
          {"lr_final", lr_final},
          {"lr_drop_epoch", lr_drop_epoch},
          {"betas", betas},
          {"adam_eps", adam_eps},
          {"scales", scales},
          {"d_min", d_min},
          {"d_max", d_max},
          {"profile", to_string(profile)},
          {"seed", seed},
          {"ablation", to_string(ablation)},
          {"bins", bins},
          {"window_s", window_s},
          {"augment", augment},
          {"smoothness_weight", smoothness_weight},
          {"max_steps", max_steps},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto known = c.to_json();
  if (!j.is_object()) throw Error(ErrorCategory::kConfig, "train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCategory::kConfig, "unknown train config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr_initial", c.lr_initial);
    get("lr_final", c.lr_final);
    get("lr_drop_epoch", c.lr_drop_epoch);
    get("betas", c.betas);
    get("adam_eps", c.adam_eps);
    get("scales", c.scales);
    get("d_min", c.d_min);
    get("d_max", c.d_max);
    if (j.contains("profile")) c.profile = profile_from_string(j.at("profile").get<std::string>());
    get("seed", c.seed);
    if (j.contains("ablation")) c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    get("bins", c.bins);
    get("window_s", c.window_s);
    get("augment", c.augment);
    get("smoothness_weight", c.smoothness_weight);
    get("max_steps", c.max_steps);
    get("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  return from_json(read_json(path));
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw Error(ErrorCategory::kRange, "epoch " + std::to_string(epoch) + " outside [0, " +
                                           std::to_string(cfg.epochs) + ")");
  }
  return epoch < cfg.lr_drop_epoch ? cfg.lr_initial : cfg.lr_final;
}

void set_deterministic(bool on) {
  if (on) torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(on, /*warn_only=*/false);
}

torch::Tensor voxel_to_image(const torch::Tensor& voxel) {
  return 0.5 + 0.5 * torch::tanh(voxel);
}

// --- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<torch::Tensor> params, std::array<double, 2> betas, double eps)
    : params_(std::move(params)), betas_(betas), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

void Adam::step(double lr) {
  torch::NoGradGuard guard;
  ++steps_;
  const double bc1 = 1.0 - std::pow(betas_[0], static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(betas_[1], static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = params_[i].grad();
    if (!g.defined()) continue;
    m_[i].mul_(betas_[0]).add_(g, 1.0 - betas_[0]);
    v_[i].mul_(betas_[1]).addcmul_(g, g, 1.0 - betas_[1]);
    auto denom = (v_[i] / bc2).sqrt_().add_(eps_);
    params_[i].addcdiv_(m_[i], denom, -lr / bc1);
  }
}

void Adam::export_to(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof(key), "%05zu", i);
    ckpt.tensors[std::string("adam.m.") + key] = m_[i].clone();
    ckpt.tensors[std::string("adam.v.") + key] = v_[i].clone();
  }
  ckpt.manifest["adam_steps"] = steps_;
}

void Adam::import_from(const Checkpoint& ckpt) {
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof(key), "%05zu", i);
    const auto m = ckpt.tensors.find(std::string("adam.m.") + key);
    const auto v = ckpt.tensors.find(std::string("adam.v.") + key);
    if (m == ckpt.tensors.end() || v == ckpt.tensors.end() || m->second.sizes() != m_[i].sizes()) {
      throw Error(ErrorCategory::kFormat, "checkpoint optimiser state does not match the model");
    }
    m_[i].copy_(m->second);
    v_[i].copy_(v->second);
  }
  steps_ = ckpt.manifest.value("adam_steps", std::int64_t{0});
}

// --- batches -----------------------------------------------------------------

Batch collate(const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw Error(ErrorCategory::kShape, "empty batch");
  Batch b;
  std::vector<torch::Tensor> vox, prev, target, next, k, vprev, vnext;
  for (const auto& s : samples) {
    if (s.voxel.sizes() != samples.front().voxel.sizes() ||
        s.triplet.target().sizes() != samples.front().triplet.target().sizes()) {
      throw Error(ErrorCategory::kShape, "batch samples differ in shape");
    }
    b.frame_indices.push_back(s.frame_index);
    vox.push_back(s.voxel);
    prev.push_back(s.triplet.prev());
    target.push_back(s.triplet.target());
    next.push_back(s.triplet.next());
    k.push_back(s.triplet.intrinsics.tensor(torch::kFloat));
    if (s.neighbor_voxels) {
      vprev.push_back((*s.neighbor_voxels)[0]);
      vnext.push_back((*s.neighbor_voxels)[1]);
    }
  }
  b.voxels = torch::stack(vox);
  b.prev = torch::stack(prev);
  b.target = torch::stack(target);
  b.next = torch::stack(next);
  b.intrinsics = torch::stack(k);
  if (vprev.size() == samples.size()) {
    b.voxel_prev = torch::stack(vprev);
    b.voxel_next = torch::stack(vnext);
  }
  return b;
}

// --- trainer -----------------------------------------------------------------

ModelConfig model_config_for(const TrainConfig& cfg, int frame_channels, int height, int width) {
  ModelConfig m;
  m.voxel_bins = cfg.bins;
  m.frame_channels = cfg.ablation == Ablation::kEventConsistency ? cfg.bins : frame_channels;
  m.scales = cfg.scales;
  m.skip = cfg.ablation == Ablation::kBaselineSkip ? SkipMode::kBaseline : SkipMode::kMultiScale;
  m.d_min = cfg.d_min;
  m.d_max = cfg.d_max;
  m.height = height;
  m.width = width;
  return m;
}

Trainer::Trainer(const TrainConfig& cfg, const ModelConfig& model) : cfg_(cfg), model_(model) {
  cfg_.validate();
  require_divisible_by_32(model.height, model.width);
  photometric_.scales = cfg.scales;
  photometric_.smoothness_weight = cfg.smoothness_weight;
  torch::manual_seed(cfg.seed);
  depth_ = DepthNet(model);
  pose_ = PoseNet(model.frame_channels);
  std::vector<torch::Tensor> params = depth_->parameters();
  for (auto& p : pose_->parameters()) params.push_back(p);
  adam_ = std::make_unique<Adam>(std::move(params), cfg.betas, cfg.adam_eps);
}

Trainer::LossImages Trainer::images(const Batch& batch) const {
  if (cfg_.ablation == Ablation::kEventConsistency) {
    if (!batch.voxel_prev.defined()) {
      throw Error(ErrorCategory::kShape, "event-consistency training needs neighbouring voxels");
    }
    return {voxel_to_image(batch.voxel_prev), voxel_to_image(batch.voxels),
            voxel_to_image(batch.voxel_next)};
  }
  return {batch.prev, batch.target, batch.next};
}

std::pair<torch::Tensor, torch::Tensor> Trainer::predict_poses(const Batch& batch) {
  const auto img = images(batch);
  return {pose_->forward(img.prev, img.target), pose_->forward(img.target, img.next)};
}

LossBreakdown Trainer::compute_loss(const Batch& batch) {
  auto pred = depth_->forward(batch.voxels);
  const auto img = images(batch);
  // (earlier, later) ordering; the backward pair is inverted
  auto to_prev = pose_vectors_to_matrices(pose_->forward(img.prev, img.target), /*invert=*/true);
  auto to_next = pose_vectors_to_matrices(pose_->forward(img.target, img.next), /*invert=*/false);
  LossInputs in{img.prev, img.target, img.next, to_prev, to_next, batch.intrinsics,
                cfg_.d_min, cfg_.d_max};
  return total_loss(pred.disparities, in, photometric_);
}

namespace {

std::string describe(const Batch& batch, const LossBreakdown* loss) {
  std::ostringstream ss;
  ss << "frames [";
  for (std::size_t i = 0; i < batch.frame_indices.size(); ++i) {
    ss << (i ? "," : "") << batch.frame_indices[i];
  }
  ss << "]";
  if (loss) {
    ss << " per-scale [";
    for (std::size_t i = 0; i < loss->per_scale.size(); ++i) ss << (i ? "," : "") << loss->per_scale[i];
    ss << "] mask " << loss->mask_fraction;
  }
  return ss.str();
}

}  // namespace

LossBreakdown Trainer::train_step(const Batch& batch) {
  depth_->train();
  pose_->train();
  adam_->zero_grad();
  std::vector<torch::Tensor> buffers;
  for (auto* net : {static_cast<torch::nn::Module*>(depth_.get()), static_cast<torch::nn::Module*>(pose_.get())}) {
    for (const auto& b : net->buffers()) buffers.push_back(b.clone());
  }
  auto reject = [&](const std::string& what, const LossBreakdown* loss) {
    torch::NoGradGuard guard;
    std::size_t i = 0;
    for (auto* net : {static_cast<torch::nn::Module*>(depth_.get()), static_cast<torch::nn::Module*>(pose_.get())}) {
      for (auto& b : net->buffers()) b.copy_(buffers[i++]);
    }
    adam_->zero_grad();
    throw Error(ErrorCategory::kNumeric, what + " at step " + std::to_string(step_) + ": " + describe(batch, loss));
  };

  LossBreakdown loss;
  try {
    loss = compute_loss(batch);
  } catch (const Error& e) {
    if (e.category() != ErrorCategory::kNumeric) throw;
    reject(e.what(), nullptr);
  }
  if (!std::isfinite(loss.total.item<double>())) reject("non-finite loss", &loss);
  loss.total.backward();
  for (auto* net : {static_cast<torch::nn::Module*>(depth_.get()), static_cast<torch::nn::Module*>(pose_.get())}) {
    for (const auto& p : net->parameters()) {
      if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) reject("non-finite gradient", &loss);
    }
  }
  adam_->step(lr_schedule(epoch_, cfg_));
  ++step_;
  history_.push_back(loss.total.item<double>());
  return loss;
}

LossBreakdown Trainer::validation_loss(const Batch& batch) {
  torch::NoGradGuard guard;
  depth_->eval();
  pose_->eval();
  auto loss = compute_loss(batch);
  depth_->train();
  pose_->train();
  return loss;
}

namespace {

// fields whose change makes a checkpoint incompatible with a resumed run
const char* const kResumeKeys[] = {"batch_size", "lr_initial", "lr_final", "lr_drop_epoch",
                                   "betas",      "adam_eps",   "scales",   "d_min",
                                   "d_max",      "profile",    "seed",     "ablation",
                                   "bins",       "window_s",   "augment",  "smoothness_weight"};

}  // namespace

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.manifest["format"] = "evdepth-checkpoint";
  ckpt.manifest["version"] = 1;
  ckpt.manifest["model"] = model_.to_json();
  ckpt.manifest["train"] = cfg_.to_json();
  ckpt.manifest["step"] = step_;
  ckpt.manifest["epoch"] = epoch_;
  export_state(*depth_, "depth.", ckpt);
  export_state(*pose_, "pose.", ckpt);
  adam_->export_to(ckpt);
  ckpt.tensors["history.loss"] =
      torch::tensor(history_.empty() ? std::vector<double>{} : history_, torch::kDouble);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const auto& m = ckpt.manifest;
  if (m.value("format", "") != "evdepth-checkpoint") {
    throw Error(ErrorCategory::kFormat, "not a training checkpoint");
  }
  if (ModelConfig::from_json(m.at("model")) != model_) {
    throw Error(ErrorCategory::kConfig, "checkpoint model configuration differs from the requested run");
  }
  const auto saved = m.at("train");
  const auto current = cfg_.to_json();
  for (const char* key : kResumeKeys) {
    if (saved.value(key, nlohmann::json()) != current.at(key)) {
      throw Error(ErrorCategory::kConfig, std::string("resume mismatch on '") + key + "'");
    }
  }
  import_state(*depth_, "depth.", ckpt);
  import_state(*pose_, "pose.", ckpt);
  adam_->import_from(ckpt);
  step_ = m.at("step").get<std::int64_t>();
  epoch_ = m.at("epoch").get<int>();
  history_.clear();
  if (auto it = ckpt.tensors.find("history.loss"); it != ckpt.tensors.end() && it->second.numel() > 0) {
    auto h = it->second.to(torch::kDouble).contiguous();
    history_.assign(h.data_ptr<double>(), h.data_ptr<double>() + h.numel());
  }
}

// --- data --------------------------------------------------------------------

TrainingSet::TrainingSet(std::vector<fs::path> sequences, const TrainConfig& cfg) : cfg_(cfg) {
  opts_.voxel = {cfg.bins, cfg.window_s, TimeOrigin::kWindowStart};
  opts_.neighbor_voxels = cfg.ablation == Ablation::kEventConsistency;
  opts_.depth = false;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    sequences_.push_back(Sequence::open(sequences[s]));
    const auto& seq = sequences_.back();
    for (std::size_t i = 0; i < seq.indices().size(); ++i) refs_.emplace_back(s, i);
    const auto r = reframe_for(cfg.profile, seq.intrinsics().height, seq.intrinsics().width);
    if (s == 0) {
      height_ = r.out_height;
      width_ = r.out_width;
      frame_channels_ = static_cast<int>(seq.frame(0).size(0));
    } else if (r.out_height != height_ || r.out_width != width_) {
      throw Error(ErrorCategory::kShape, "training sequences differ in size");
    }
  }
}

TrainingSample TrainingSet::get(std::size_t i, std::optional<std::uint64_t> augment_epoch) const {
  const auto [s, idx] = refs_.at(i);
  auto sample = preprocess(sequences_[s].sample(idx, opts_), cfg_.profile);
  if (augment_epoch && cfg_.augment) {
    auto rng = sample_rng(cfg_.seed, *augment_epoch, i);
    sample = augment(sample, rng, cfg_.profile);
  }
  return sample;
}

// --- fit ---------------------------------------------------------------------

namespace {

void save_named(const Trainer& trainer, const fs::path& path) {
  save_checkpoint(path, trainer.to_checkpoint());
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = sample_rng(seed, static_cast<std::uint64_t>(epoch), ~std::uint64_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

FitResult fit(const TrainConfig& cfg, const fs::path& dataset, const fs::path& out,
              const FitOptions& options) {
  cfg.validate();
  set_deterministic(options.deterministic);
  const auto splits = DatasetSplits::resolve(dataset);
  if (splits.train.empty()) throw Error(ErrorCategory::kIo, "no training sequence under " + dataset.string());
  TrainingSet train_set(splits.train, cfg);
  if (train_set.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw Error(ErrorCategory::kConfig, "training set holds " + std::to_string(train_set.size()) +
                                            " samples, fewer than one batch");
  }
  std::optional<TrainingSet> val_set;
  if (!splits.val.empty()) val_set.emplace(splits.val, cfg);

  const auto model = model_config_for(cfg, train_set.frame_channels(), train_set.height(), train_set.width());
  Trainer trainer(cfg, model);
  if (options.resume) {
    trainer.restore(load_checkpoint(*options.resume));
  } else if (options.encoder_init) {
    const auto init = load_checkpoint(*options.encoder_init);
    auto& encoder = trainer.depth_net()->encoder();
    import_state(*encoder, "depth.encoder.", init, {"conv1.weight"});
    reset_stem(encoder);
  }

  fs::create_directories(out);
  atomic_write(out / "config.json", cfg.to_json().dump(2) + "\n");
  std::ofstream log(out / "log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw Error(ErrorCategory::kIo, "cannot open " + (out / "log.jsonl").string());

  const auto steps_per_epoch = static_cast<std::int64_t>(train_set.size()) / cfg.batch_size;
  FitResult result;
  auto emit = [&](const nlohmann::json& record) {
    log << record.dump() << "\n";
    log.flush();
    if (options.on_step) options.on_step(record);
  };

  bool stop = false;
  for (int epoch = trainer.epoch(); epoch < cfg.epochs && !stop; ++epoch) {
    trainer.set_epoch(epoch);
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    const std::int64_t first = trainer.step() - epoch * steps_per_epoch;
    if (first < 0 || first > steps_per_epoch) {
      throw Error(ErrorCategory::kConfig, "checkpoint step does not match the epoch layout");
    }
    for (std::int64_t b = first; b < steps_per_epoch; ++b) {
      if (cfg.max_steps > 0 && trainer.step() >= cfg.max_steps) {
        stop = true;
        break;
      }
      std::vector<TrainingSample> samples;
      for (int i = 0; i < cfg.batch_size; ++i) {
        samples.push_back(train_set.get(order[static_cast<std::size_t>(b * cfg.batch_size + i)],
                                        static_cast<std::uint64_t>(epoch)));
      }
      const auto loss = trainer.train_step(collate(samples));
      result.losses.push_back(loss.total.item<double>());
      emit({{"type", "train"},
            {"step", trainer.step()},
            {"epoch", epoch},
            {"lr", lr_schedule(epoch, cfg)},
            {"loss", loss.total.item<double>()},
            {"per_scale", loss.per_scale},
            {"mask_fraction", loss.mask_fraction}});
      if (cfg.checkpoint_every > 0 && trainer.step() % cfg.checkpoint_every == 0) {
        save_named(trainer, out / ("step_" + std::to_string(trainer.step()) + ".ckpt"));
        save_named(trainer, out / "last.ckpt");
      }
    }
    if (stop) break;

    trainer.set_epoch(epoch + 1);
    if (val_set && val_set->size() > 0) {
      const auto bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), val_set->size());
      double sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start + bs <= val_set->size(); start += bs) {
        std::vector<TrainingSample> samples;
        for (std::size_t i = start; i < start + bs; ++i) samples.push_back(val_set->get(i, std::nullopt));
        sum += trainer.validation_loss(collate(samples)).total.item<double>();
        ++batches;
      }
      const double val = sum / static_cast<double>(batches);
      result.val_losses.push_back(val);
      emit({{"type", "val"}, {"step", trainer.step()}, {"epoch", epoch}, {"loss", val}});
    }
    save_named(trainer, out / ("epoch_" + std::to_string(epoch) + ".ckpt"));
    save_named(trainer, out / "last.ckpt");
  }

  result.final_checkpoint = out / "final.ckpt";
  save_named(trainer, result.final_checkpoint);
  result.steps = trainer.step();
  nlohmann::json summary = {{"steps", trainer.step()},
                            {"epoch", trainer.epoch()},
                            {"final_checkpoint", result.final_checkpoint.string()},
                            {"val_losses", result.val_losses}};
  if (!result.losses.empty()) {
    summary["first_loss"] = result.losses.front();
    summary["last_loss"] = result.losses.back();
  }
  atomic_write(out / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace evdepth
