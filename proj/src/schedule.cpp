#include "fex4d/schedule.hpp"

#include <cmath>

namespace fex4d {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.beta[i] = beta_start + (static_cast<double>(i) / (T - 1)) * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = std::sqrt(s.beta[i]);
  }
  return s;
}

static void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                c10::str(a.sizes(), " vs ", b.sizes()));
}

ForwardSample q_sample(const torch::Tensor& x0, int t, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "q_sample");
  const double abar = sched.alpha_bar_t(t);
  ForwardSample fs;
  fs.eps = eps;
  fs.x_t = std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
  return fs;
}

torch::Tensor q_sample_batch(const torch::Tensor& x0, const torch::Tensor& t,
                             const torch::Tensor& eps, const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "q_sample_batch");
  if (t.size(0) != x0.size(0))
    throw std::invalid_argument("q_sample_batch: t must have one step per batch item");
  auto abar_all = torch::from_blob(const_cast<double*>(sched.alpha_bar.data()),
                                   {sched.T}, torch::kFloat64)
                      .clone();
  auto abar = abar_all.index_select(0, t - 1);
  // broadcast over trailing dims; keep the coefficients in double so the
  // result matches the per-item scalar path bit for bit
  std::vector<int64_t> shape(x0.dim(), 1);
  shape[0] = x0.size(0);
  abar = abar.view(shape);
  auto c0 = torch::sqrt(abar).to(x0.scalar_type());
  auto c1 = torch::sqrt(1 - abar).to(x0.scalar_type());
  return c0 * x0 + c1 * eps;
}

torch::Tensor q_step(const torch::Tensor& x_prev, int t, const NoiseSchedule& sched,
                     torch::Generator& gen) {
  const double b = sched.beta_t(t);
  auto noise = torch::randn(x_prev.sizes(), gen, x_prev.options());
  return std::sqrt(1.0 - b) * x_prev + std::sqrt(b) * noise;
}

torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_hat, int t,
                             const NoiseSchedule& sched) {
  check_same_shape(x_t, eps_hat, "posterior_mean");
  const double a = sched.alpha_t(t);
  const double abar = sched.alpha_bar_t(t);
  const double b = sched.beta_t(t);
  return (x_t - (b / std::sqrt(1.0 - abar)) * eps_hat) / std::sqrt(a);
}

torch::Tensor simple_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat) {
  check_same_shape(eps, eps_hat, "simple_loss");
  return torch::mse_loss(eps_hat, eps);
}

}  // namespace fex4d
