#pragma once

#include <torch/torch.h>

#include "fex4d/corpus.hpp"
#include "fex4d/denoiser.hpp"
#include "fex4d/guidance.hpp"

namespace fex4d {

struct ICConfig {
  int input_dim = 204;  // N*3
  int hidden = 128;
  int classes = 2;
};

// Evaluation-only classifier: one LSTM layer followed by a linear layer.
// The linear-layer (pre-softmax) output doubles as the FID feature vector.
class IndependentClassifierImpl : public torch::nn::Module {
 public:
  explicit IndependentClassifierImpl(ICConfig cfg);

  // x: [B, F, C] clean sequences; lengths: int64 [B] valid frame counts.
  // Returns logits [B, K] read at the last valid step.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& lengths);
  torch::Tensor features(const torch::Tensor& x, const torch::Tensor& lengths) {
    return forward(x, lengths);
  }

  const ICConfig& config() const { return cfg_; }

 private:
  ICConfig cfg_;
  torch::nn::LSTM lstm_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(IndependentClassifier);

struct ICTrainSettings {
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 50;
  double val_fraction = 0.1;
  int patience = 8;  // early stopping on the validation split
  uint64_t seed = 0;
};

struct ICTrainResult {
  double held_out_accuracy = 0.0;
};

ICTrainResult train_ic(IndependentClassifier& model, const LabeledSequences& data,
                       const ICTrainSettings& settings);

double ic_accuracy(IndependentClassifier& model, const LabeledSequences& data);

// IC features for a set of sequences: [n, K].
torch::Tensor ic_features(IndependentClassifier& model,
                          const std::vector<torch::Tensor>& sequences);

// Frechet distance between Gaussian fits:
// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with the matrix square
// root taken through the symmetric form Sa^{1/2} Sb Sa^{1/2} and eigenvalues
// clamped at zero. Warns (returns normally) when n < D + 1.
double fid(const torch::Tensor& features_a, const torch::Tensor& features_b);

struct EvalReport {
  double accuracy = 0.0;
  double fid = 0.0;

  std::string to_text() const;  // one key per line
  std::string to_csv() const;
};

// Accuracy of the IC against intended labels of generated sequences, and FID
// between IC features of generated and reference sets.
EvalReport evaluate_generation(IndependentClassifier& ic,
                               const LabeledSequences& generated,
                               const LabeledSequences& reference);

}  // namespace fex4d
