#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "fex4d/corpus.hpp"
#include "fex4d/schedule.hpp"

namespace fex4d {

struct DenoiserConfig {
  int layers = 6;
  int heads = 8;
  int model_dim = 256;
  int feedforward_dim = 1024;
  double dropout = 0.1;
  int max_len = 64;
  int n_landmarks = 68;

  int frame_dim() const { return n_landmarks * 3; }
  void validate() const;
};

// Fixed sinusoidal table; row p encodes frame index p+1 (or diffusion step).
torch::Tensor sinusoidal_encoding(int positions, int dim);

// Bidirectional-transformer noise approximator. Input frames are flattened
// to N*3, embedded as TE(t) + PE(f) + FE(x_t[f]), and the output projection
// is zero-initialized so the untrained model predicts the zero noise field.
class SequenceDenoiserImpl : public torch::nn::Module {
 public:
  explicit SequenceDenoiserImpl(DenoiserConfig cfg);

  // x: [B, F, N*3], t: int64 [B] of one-based steps in 1..T,
  // valid: optional bool [B, F] (true = real frame). Returns [B, F, N*3].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t,
                        const torch::Tensor& valid = {});

  // Embedding sum before the transformer stack: [B, F, model_dim].
  torch::Tensor embed_inputs(const torch::Tensor& x, const torch::Tensor& t);

  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  torch::nn::Linear feature_embed_{nullptr};
  torch::nn::Linear time_embed_1_{nullptr};
  torch::nn::Linear time_embed_2_{nullptr};
  torch::nn::TransformerEncoder encoder_{nullptr};
  torch::nn::Linear out_proj_{nullptr};
  torch::Tensor pos_table_;   // [max_len, model_dim]
  torch::Tensor time_table_;  // sinusoidal base for t
};
TORCH_MODULE(SequenceDenoiser);

struct TrainResult {
  std::vector<double> loss_trace;
};

struct TrainSettings {
  double lr = 1e-4;
  int batch_size = 32;
  int iters = 5000;
  uint64_t seed = 0;
  int log_every = 50;
  std::function<void(int, double)> on_step;  // optional progress hook
};

// Mixed-length training batches, padded with attention masking; loss is
// computed on valid frames only. Landmarks are expected pre-normalized.
TrainResult train_denoiser(SequenceDenoiser& model, const std::vector<torch::Tensor>& sequences,
                           const NoiseSchedule& sched, const TrainSettings& settings);

// Flatten records to normalized [F, N*3] training tensors.
std::vector<torch::Tensor> flatten_corpus(const Corpus& corpus, const CorpusStats& stats);

}  // namespace fex4d
