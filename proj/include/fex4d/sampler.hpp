#pragma once

#include <torch/torch.h>

#include <functional>

#include "fex4d/guidance.hpp"
#include "fex4d/schedule.hpp"

namespace fex4d {

// Noise estimate eps_theta(x_t, t); x is [B, F, C]. Implementations must be
// usable under no-grad (the samplers never differentiate through it).
using NoiseFn = std::function<torch::Tensor(const torch::Tensor& x, int t)>;

// Per-item guidance log-objective [B], differentiable w.r.t. x.
using GuideFn = std::function<torch::Tensor(const torch::Tensor& x, int t)>;

struct GuidanceConfig {
  double lambda = 0.01;         // fluency weight
  int opt_steps = 3;            // Adagrad ascent steps per diffusion step
  double opt_lr = 0.05;
  int harmonization_iters = 5;  // outer iterations for geometry-adaptive
};

struct FrameMask {
  int64_t F = 0;
  torch::Tensor known_idx;     // int64 [K], sorted ascending, 0-based
  torch::Tensor known_frames;  // [K, C] clean frames

  torch::Tensor unknown_idx() const;
  void validate() const;
};

// Mask protocols: known partial sequence of length l at the start (FFB), the
// end (FFE), or l frames at both ends (FFM); l drawn uniformly per protocol.
FrameMask make_mask_ffb(const torch::Tensor& clean, torch::Generator& gen);
FrameMask make_mask_ffe(const torch::Tensor& clean, torch::Generator& gen);
FrameMask make_mask_ffm(const torch::Tensor& clean, torch::Generator& gen);

// Per-item log N(x; mu, sigma2 I) with the additive constant dropped.
torch::Tensor fluency_log_density(const torch::Tensor& x, const torch::Tensor& mu,
                                  double sigma2);

// One unguided ancestral step x_t -> x_{t-1} (z = 0 at t = 1).
torch::Tensor reverse_step(const torch::Tensor& x_t, int t, const NoiseFn& noise_fn,
                           const NoiseSchedule& sched, torch::Generator& gen);

// Guided step: stochastic draw, then opt_steps of Adagrad ascent on
// lambda * log p_theta(x | x_t) + guide(x, t-1). The guide is evaluated at
// step max(t-1, 1) since the classifier never saw t = 0.
torch::Tensor guided_step(const torch::Tensor& x_t, int t, const NoiseFn& noise_fn,
                          const GuideFn& guide, const NoiseSchedule& sched,
                          const GuidanceConfig& cfg, torch::Generator& gen);

torch::Tensor sample_unconditional(int64_t B, int64_t F, int64_t C, const NoiseSchedule& sched,
                                   const NoiseFn& noise_fn, torch::Generator& gen);

torch::Tensor sample_guided(int64_t B, int64_t F, int64_t C, const NoiseSchedule& sched,
                            const NoiseFn& noise_fn, const GuideFn& guide,
                            const GuidanceConfig& cfg, torch::Generator& gen);

// Known rows of the result equal the mask's frames bit-exactly.
torch::Tensor sample_filling(int64_t B, const FrameMask& mask, const NoiseSchedule& sched,
                             const NoiseFn& noise_fn, torch::Generator& gen);

// Iterative harmonization; pass a null guide for the unguided variant.
torch::Tensor sample_geometry_adaptive(int64_t B, const FrameMask& mask,
                                       const NoiseSchedule& sched, const NoiseFn& noise_fn,
                                       const GuideFn& guide, const GuidanceConfig& cfg,
                                       torch::Generator& gen);

// Baseline for the filling comparisons: unknown rows take the mean of the
// known rows.
torch::Tensor mean_imputation(const FrameMask& mask);

// Guidance objectives over trained models.
GuideFn make_label_guide(GuidanceBiT classifier, int64_t label);
GuideFn make_text_guide(GuidanceBiT head, const torch::Tensor& target_embedding);

// eps_theta closure over a frozen denoiser (runs under no-grad).
NoiseFn make_denoiser_fn(SequenceDenoiser denoiser);

}  // namespace fex4d
