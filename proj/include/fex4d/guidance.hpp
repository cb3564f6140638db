#pragma once

#include <torch/torch.h>

#include "fex4d/corpus.hpp"
#include "fex4d/denoiser.hpp"
#include "fex4d/schedule.hpp"
#include "fex4d/text_embed.hpp"

namespace fex4d {

struct GuidanceNetConfig {
  int layers = 3;
  int heads = 4;
  int model_dim = 128;
  int feedforward_dim = 512;
  double dropout = 0.0;
  int max_len = 64;
  int n_landmarks = 68;
  int out_dim = 2;  // class count K, or 512 for the text head
  bool order_sensitive = false;  // type S: expression x {N2E, E2N}

  int frame_dim() const { return n_landmarks * 3; }
};

// BiT with a prepended learnable classification token; the token's output row
// feeds a linear head of out_dim units. Used both as the noisy-data label
// classifier (with log-softmax) and as the text-alignment head (raw output).
class GuidanceBiTImpl : public torch::nn::Module {
 public:
  explicit GuidanceBiTImpl(GuidanceNetConfig cfg);

  // Raw head output: [B, out_dim]. Differentiable w.r.t. x.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t,
                        const torch::Tensor& valid = {});

  // Log-probabilities over the K classes: [B, K].
  torch::Tensor log_probs(const torch::Tensor& x, const torch::Tensor& t,
                          const torch::Tensor& valid = {});

  const GuidanceNetConfig& config() const { return cfg_; }

 private:
  GuidanceNetConfig cfg_;
  torch::Tensor cls_token_;
  torch::nn::Linear feature_embed_{nullptr};
  torch::nn::Linear time_embed_1_{nullptr};
  torch::nn::Linear time_embed_2_{nullptr};
  torch::nn::TransformerEncoder encoder_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::Tensor pos_table_;
  torch::Tensor time_table_;
};
TORCH_MODULE(GuidanceBiT);

// Type-S label space is the product of expression labels and {N2E, E2N}.
int type_s_label(int expression_label, SeqType type);
int type_s_class_count(int n_expressions);

struct LabeledSequences {
  std::vector<torch::Tensor> sequences;  // normalized [F, N*3]
  std::vector<int64_t> labels;
};

LabeledSequences label_corpus(const Corpus& corpus, const CorpusStats& stats,
                              bool order_sensitive);

// Noises x_0 with uniformly drawn t per item and minimizes cross-entropy on
// (x_t, t, y). Throws if the labels do not cover all K classes.
TrainResult train_guidance_classifier(GuidanceBiT& model, const LabeledSequences& data,
                                      const NoiseSchedule& sched, const TrainSettings& settings);

// Trains the 512-d head with loss 1 - cos(head(x_t, t), target_embedding),
// noising x_0 exactly as in classifier training.
TrainResult train_text_head(GuidanceBiT& model, const std::vector<torch::Tensor>& sequences,
                            const std::vector<torch::Tensor>& targets,
                            const NoiseSchedule& sched, const TrainSettings& settings);

}  // namespace fex4d
