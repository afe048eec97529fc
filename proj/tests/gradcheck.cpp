#include "gradcheck.hpp"

#include <cmath>

#include "evdepth/geometry.hpp"
#include "evdepth/photometric.hpp"
#include "support.hpp"

using namespace evdepth;

namespace evtest {

namespace {

struct Scene {
  LossInputs base;
  std::vector<torch::Tensor> disparities;
  torch::Tensor pose_prev;
  torch::Tensor pose_next;
  PhotometricConfig cfg;
};

LossBreakdown evaluate(const Scene& s) {
  LossInputs in = s.base;
  in.to_prev = pose_vectors_to_matrices(s.pose_prev, false);
  in.to_next = pose_vectors_to_matrices(s.pose_next, false);
  return total_loss(s.disparities, in, s.cfg);
}

struct Accumulator {
  double diff2 = 0, ref2 = 0;
  double rel() const { return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12); }
};

// Central difference of one leaf entry; false when the mask switched.
bool central_difference(Scene& s, torch::Tensor& leaf, int64_t index, double h, double& out) {
  auto flat = leaf.view({-1});
  const double x = flat[index].item<double>();
  const double m0 = evaluate(s).mask_fraction;
  flat[index] = x + h;
  const auto plus = evaluate(s);
  flat[index] = x - h;
  const auto minus = evaluate(s);
  flat[index] = x;
  if (plus.mask_fraction != m0 || minus.mask_fraction != m0) return false;
  out = (plus.total.item<double>() - minus.total.item<double>()) / (2 * h);
  return true;
}

}  // namespace

GradientReport check_loss_gradients(std::mt19937_64& rng, int scales, int samples_per_scale, double h) {
  torch::NoGradGuard outer_off;
  const int size = 16;
  Scene s;
  s.cfg.scales = scales;
  auto tex = random_texture(rng, 1, 3, size, size + 4, torch::kDouble);
  s.base.target = tex.narrow(3, 2, size).contiguous();
  s.base.prev = tex.narrow(3, 1, size).contiguous();
  s.base.next = tex.narrow(3, 3, size).contiguous();
  s.base.intrinsics = CameraIntrinsics{12, 12, 7.5, 7.5, size, size}.tensor(torch::kDouble).unsqueeze(0);

  std::uniform_real_distribution<double> ud(0.05, 0.3), up(-0.04, 0.04);
  for (int j = 0; j < scales; ++j) {
    const int sj = size >> j;
    auto d = torch::empty({1, 1, sj, sj}, torch::kDouble);
    auto* p = d.data_ptr<double>();
    for (int64_t i = 0; i < d.numel(); ++i) p[i] = ud(rng);
    s.disparities.push_back(d);
  }
  auto pose = [&] {
    auto v = torch::empty({1, 6}, torch::kDouble);
    for (int i = 0; i < 6; ++i) v[0][i] = up(rng);
    return v;
  };
  s.pose_prev = pose();
  s.pose_next = pose();

  std::vector<torch::Tensor> grads;
  {
    torch::AutoGradMode on(true);
    std::vector<torch::Tensor> leaves;
    for (auto& d : s.disparities) leaves.push_back(d.clone().requires_grad_(true));
    leaves.push_back(s.pose_prev.clone().requires_grad_(true));
    leaves.push_back(s.pose_next.clone().requires_grad_(true));
    Scene g = s;
    g.disparities.assign(leaves.begin(), leaves.begin() + scales);
    g.pose_prev = leaves[scales];
    g.pose_next = leaves[scales + 1];
    evaluate(g).total.backward();
    for (auto& l : leaves) grads.push_back(l.grad().clone());
  }

  GradientReport report;
  Accumulator disp, pose_acc;
  for (int j = 0; j < scales; ++j) {
    const int64_t n = s.disparities[j].numel();
    std::uniform_int_distribution<int64_t> pick(0, n - 1);
    for (int k = 0; k < std::min<int64_t>(samples_per_scale, n); ++k) {
      const int64_t idx = pick(rng);
      double fd = 0;
      if (!central_difference(s, s.disparities[j], idx, h, fd)) {
        ++report.skipped;
        continue;
      }
      const double an = grads[j].view({-1})[idx].item<double>();
      disp.diff2 += (an - fd) * (an - fd);
      disp.ref2 += fd * fd;
      ++report.checked;
    }
  }
  for (int which = 0; which < 2; ++which) {
    auto& leaf = which == 0 ? s.pose_prev : s.pose_next;
    for (int64_t idx = 0; idx < 6; ++idx) {
      double fd = 0;
      if (!central_difference(s, leaf, idx, h, fd)) {
        ++report.skipped;
        continue;
      }
      const double an = grads[scales + which].view({-1})[idx].item<double>();
      pose_acc.diff2 += (an - fd) * (an - fd);
      pose_acc.ref2 += fd * fd;
      ++report.checked;
    }
  }
  report.disparity_rel_error = disp.rel();
  report.pose_rel_error = pose_acc.rel();
  return report;
}

}  // namespace evtest
