#pragma once

#include <torch/torch.h>

#include <stdexcept>
#include <vector>

namespace fex4d {

// Linear variance schedule with all closed-form forward-process quantities
// precomputed at double precision. One-based indexing beta_1..beta_T maps to
// the 0-indexed arrays as t = index + 1; every accessor below takes one-based t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[i]  = beta_{i+1}
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product of alpha
  std::vector<double> sigma;      // sigma_t^2 = beta_t

  double beta_t(int t) const { return beta.at(check(t) - 1); }
  double alpha_t(int t) const { return alpha.at(check(t) - 1); }
  double alpha_bar_t(int t) const { return alpha_bar.at(check(t) - 1); }
  double sigma_t(int t) const { return sigma.at(check(t) - 1); }

 private:
  int check(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("schedule step out of range: " + std::to_string(t));
    return t;
  }
};

struct ForwardSample {
  torch::Tensor x_t;
  torch::Tensor eps;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with the caller's eps draw.
ForwardSample q_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                       const NoiseSchedule& sched);

// Batched variant: t is an int64 tensor of one-based steps, one per batch item.
torch::Tensor q_sample_batch(const torch::Tensor& x0, const torch::Tensor& t,
                             const torch::Tensor& eps, const NoiseSchedule& sched);

// One forward Markov step: draw from N(sqrt(1-beta_t) x_prev, beta_t I).
torch::Tensor q_step(const torch::Tensor& x_prev, int t, const NoiseSchedule& sched,
                     torch::Generator& gen);

// Reverse-step mean mu_theta computed from the noise estimate.
torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_hat, int t,
                             const NoiseSchedule& sched);

// Mean squared error between the noise draw and its estimate.
torch::Tensor simple_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat);

}  // namespace fex4d
