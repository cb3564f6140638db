#include "fex4d/sampler.hpp"

#include <cmath>

namespace fex4d {

torch::Tensor FrameMask::unknown_idx() const {
  auto all = torch::arange(F, torch::kInt64);
  auto known_mask = torch::zeros({F}, torch::kBool);
  known_mask.index_fill_(0, known_idx, true);
  return all.masked_select(~known_mask);
}

void FrameMask::validate() const {
  if (known_idx.numel() == 0)
    throw std::invalid_argument("frame mask: empty known set (use unconditional sampling)");
  if (known_idx.numel() != known_frames.size(0))
    throw std::invalid_argument("frame mask: known_frames row count mismatch");
  auto idx = known_idx.contiguous();
  auto* p = idx.data_ptr<int64_t>();
  for (int64_t i = 0; i < idx.numel(); ++i) {
    if (p[i] < 0 || p[i] >= F) throw std::invalid_argument("frame mask: index out of range");
    if (i > 0 && p[i] <= p[i - 1])
      throw std::invalid_argument("frame mask: indices must be sorted and unique");
  }
}

namespace {

FrameMask make_mask(const torch::Tensor& clean, const torch::Tensor& idx) {
  FrameMask mask;
  mask.F = clean.size(0);
  mask.known_idx = idx;
  mask.known_frames = clean.index_select(0, idx).clone();
  mask.validate();
  return mask;
}

int64_t draw_l(int64_t lo, int64_t hi, torch::Generator& gen) {
  return torch::randint(lo, hi + 1, {1}, gen, torch::kInt64).item<int64_t>();
}

}  // namespace

FrameMask make_mask_ffb(const torch::Tensor& clean, torch::Generator& gen) {
  const int64_t l = std::min<int64_t>(draw_l(10, 30, gen), clean.size(0));
  return make_mask(clean, torch::arange(l, torch::kInt64));
}

FrameMask make_mask_ffe(const torch::Tensor& clean, torch::Generator& gen) {
  const int64_t F = clean.size(0);
  const int64_t l = std::min<int64_t>(draw_l(10, 30, gen), F);
  return make_mask(clean, torch::arange(F - l, F, torch::kInt64));
}

FrameMask make_mask_ffm(const torch::Tensor& clean, torch::Generator& gen) {
  const int64_t F = clean.size(0);
  const int64_t l = std::min<int64_t>(draw_l(5, 15, gen), F / 2);
  auto idx = torch::cat({torch::arange(l, torch::kInt64), torch::arange(F - l, F, torch::kInt64)});
  return make_mask(clean, idx);
}

torch::Tensor fluency_log_density(const torch::Tensor& x, const torch::Tensor& mu,
                                  double sigma2) {
  auto diff = (x - mu).flatten(1);
  return -(diff * diff).sum(1) / (2.0 * sigma2);
}

torch::Tensor reverse_step(const torch::Tensor& x_t, int t, const NoiseFn& noise_fn,
                           const NoiseSchedule& sched, torch::Generator& gen) {
  torch::NoGradGuard ng;
  auto mu = posterior_mean(x_t, noise_fn(x_t, t), t, sched);
  if (t > 1) mu = mu + sched.sigma_t(t) * torch::randn(mu.sizes(), gen, mu.options());
  if (!mu.isfinite().all().item<bool>())
    throw std::runtime_error("sampler: non-finite state at step " + std::to_string(t));
  return mu;
}

torch::Tensor guided_step(const torch::Tensor& x_t, int t, const NoiseFn& noise_fn,
                          const GuideFn& guide, const NoiseSchedule& sched,
                          const GuidanceConfig& cfg, torch::Generator& gen) {
  torch::Tensor mu, x;
  {
    torch::NoGradGuard ng;
    mu = posterior_mean(x_t, noise_fn(x_t, t), t, sched);
    x = mu.clone();
    if (t > 1) x = x + sched.sigma_t(t) * torch::randn(mu.sizes(), gen, mu.options());
  }
  const double sigma2 = sched.beta_t(t);
  const int guide_t = std::max(t - 1, 1);  // classifier never saw t = 0
  auto acc = torch::zeros_like(x);
  for (int s = 0; s < cfg.opt_steps; ++s) {
    auto x_leaf = x.detach().requires_grad_(true);
    auto obj = guide(x_leaf, guide_t).sum();
    auto guide_grad = torch::autograd::grad({obj}, {x_leaf})[0];
    torch::NoGradGuard ng;
    auto grad = cfg.lambda * (mu - x) / sigma2 + guide_grad;
    acc += grad * grad;
    x = x + cfg.opt_lr * grad / (acc.sqrt() + 1e-10);
  }
  if (!x.isfinite().all().item<bool>())
    throw std::runtime_error("sampler: non-finite guided objective at step " + std::to_string(t));
  return x.detach();
}

torch::Tensor sample_unconditional(int64_t B, int64_t F, int64_t C, const NoiseSchedule& sched,
                                   const NoiseFn& noise_fn, torch::Generator& gen) {
  auto x = torch::randn({B, F, C}, gen);
  for (int t = sched.T; t >= 1; --t) x = reverse_step(x, t, noise_fn, sched, gen);
  return x;
}

torch::Tensor sample_guided(int64_t B, int64_t F, int64_t C, const NoiseSchedule& sched,
                            const NoiseFn& noise_fn, const GuideFn& guide,
                            const GuidanceConfig& cfg, torch::Generator& gen) {
  auto x = torch::randn({B, F, C}, gen);
  for (int t = sched.T; t >= 1; --t) x = guided_step(x, t, noise_fn, guide, sched, cfg, gen);
  return x;
}

namespace {

// Draw x_t rows for the known frames at step t from the closed-form forward marginal.
torch::Tensor noised_known(const FrameMask& mask, int64_t B, int t, const NoiseSchedule& sched,
                           torch::Generator& gen) {
  auto known = mask.known_frames.unsqueeze(0).expand({B, -1, -1});
  auto eps = torch::randn(known.sizes(), gen, known.options());
  return q_sample(known, t, eps, sched).x_t;
}

void set_rows(torch::Tensor& x, const torch::Tensor& idx, const torch::Tensor& rows) {
  x.index_copy_(1, idx, rows);
}

torch::Tensor fill_chain(int64_t B, const FrameMask& mask, const torch::Tensor& x_T,
                         const NoiseSchedule& sched, const NoiseFn& noise_fn,
                         const GuideFn& guide, const GuidanceConfig& cfg,
                         torch::Generator& gen) {
  auto x = x_T;
  for (int t = sched.T; t >= 1; --t) {
    auto x_hat = guide ? guided_step(x, t, noise_fn, guide, sched, cfg, gen)
                       : reverse_step(x, t, noise_fn, sched, gen);
    x = x_hat;
    if (t > 1) set_rows(x, mask.known_idx, noised_known(mask, B, t - 1, sched, gen));
  }
  // x_0 known rows come from the input, bit-exact.
  set_rows(x, mask.known_idx, mask.known_frames.unsqueeze(0).expand({B, -1, -1}));
  return x;
}

torch::Tensor init_masked_x_T(int64_t B, const FrameMask& mask, const NoiseSchedule& sched,
                              torch::Generator& gen) {
  const auto C = mask.known_frames.size(1);
  auto x = torch::randn({B, mask.F, C}, gen);
  set_rows(x, mask.known_idx, noised_known(mask, B, sched.T, sched, gen));
  return x;
}

}  // namespace

torch::Tensor sample_filling(int64_t B, const FrameMask& mask, const NoiseSchedule& sched,
                             const NoiseFn& noise_fn, torch::Generator& gen) {
  mask.validate();
  auto x_T = init_masked_x_T(B, mask, sched, gen);
  return fill_chain(B, mask, x_T, sched, noise_fn, {}, {}, gen);
}

torch::Tensor sample_geometry_adaptive(int64_t B, const FrameMask& mask,
                                       const NoiseSchedule& sched, const NoiseFn& noise_fn,
                                       const GuideFn& guide, const GuidanceConfig& cfg,
                                       torch::Generator& gen) {
  mask.validate();
  torch::Tensor x0;
  for (int iter = 0; iter < cfg.harmonization_iters; ++iter) {
    torch::Tensor x_T;
    if (iter == 0) {
      x_T = init_masked_x_T(B, mask, sched, gen);
    } else {
      auto eps = torch::randn(x0.sizes(), gen, x0.options());
      x_T = q_sample(x0, sched.T, eps, sched).x_t;  // re-noise the previous result
    }
    x0 = fill_chain(B, mask, x_T, sched, noise_fn, guide, cfg, gen);
  }
  return x0;
}

torch::Tensor mean_imputation(const FrameMask& mask) {
  mask.validate();
  const auto C = mask.known_frames.size(1);
  auto out = mask.known_frames.mean(0).unsqueeze(0).expand({mask.F, C}).clone();
  out.index_copy_(0, mask.known_idx, mask.known_frames);
  return out;
}

GuideFn make_label_guide(GuidanceBiT classifier, int64_t label) {
  return [classifier, label](const torch::Tensor& x, int t) mutable {
    auto steps = torch::full({x.size(0)}, t, torch::kInt64);
    return classifier->log_probs(x, steps).select(1, label);
  };
}

GuideFn make_text_guide(GuidanceBiT head, const torch::Tensor& target_embedding) {
  auto target = target_embedding.unsqueeze(0);
  return [head, target](const torch::Tensor& x, int t) mutable {
    auto steps = torch::full({x.size(0)}, t, torch::kInt64);
    return torch::cosine_similarity(head->forward(x, steps), target, 1);
  };
}

NoiseFn make_denoiser_fn(SequenceDenoiser denoiser) {
  denoiser->eval();
  return [denoiser](const torch::Tensor& x, int t) mutable {
    torch::NoGradGuard ng;
    auto steps = torch::full({x.size(0)}, t, torch::kInt64);
    return denoiser->forward(x, steps);
  };
}

}  // namespace fex4d
