#include "fex4d/guidance.hpp"

#include <set>

namespace fex4d {

GuidanceBiTImpl::GuidanceBiTImpl(GuidanceNetConfig cfg) : cfg_(cfg) {
  if (cfg_.model_dim % cfg_.heads != 0)
    throw std::invalid_argument("guidance: model_dim must be divisible by heads");
  const int D = cfg_.model_dim;
  cls_token_ = register_parameter("cls_token", torch::zeros({1, 1, D}));
  feature_embed_ = register_module("feature_embed", torch::nn::Linear(cfg_.frame_dim(), D));
  time_embed_1_ = register_module("time_embed_1", torch::nn::Linear(D, D));
  time_embed_2_ = register_module("time_embed_2", torch::nn::Linear(D, D));
  auto layer_opts = torch::nn::TransformerEncoderLayerOptions(D, cfg_.heads)
                        .dim_feedforward(cfg_.feedforward_dim)
                        .dropout(cfg_.dropout);
  encoder_ = register_module(
      "encoder", torch::nn::TransformerEncoder(torch::nn::TransformerEncoderLayer(layer_opts),
                                               cfg_.layers));
  head_ = register_module("head", torch::nn::Linear(D, cfg_.out_dim));
  pos_table_ = register_buffer("pos_table", sinusoidal_encoding(cfg_.max_len, D));
  time_table_ = register_buffer("time_table", sinusoidal_encoding(4096, D));
}

torch::Tensor GuidanceBiTImpl::forward(const torch::Tensor& x, const torch::Tensor& t,
                                       const torch::Tensor& valid) {
  const auto B = x.size(0);
  const auto F = x.size(1);
  if (F > cfg_.max_len)
    throw std::invalid_argument("guidance: sequence length exceeds max_len");
  auto te = time_embed_2_->forward(torch::silu(time_embed_1_->forward(
      time_table_.index_select(0, t))));
  auto pe = pos_table_.narrow(0, 0, F);
  auto h = feature_embed_->forward(x) + pe.unsqueeze(0) + te.unsqueeze(1);  // [B,F,D]
  h = torch::cat({cls_token_.expand({B, 1, cfg_.model_dim}), h}, 1);
  torch::Tensor key_padding = {};
  if (valid.defined()) {
    auto token_valid = torch::ones({B, 1}, torch::kBool);
    key_padding = ~torch::cat({token_valid, valid}, 1);
  }
  auto out = encoder_->forward(h.transpose(0, 1), {}, key_padding);
  return head_->forward(out[0]);  // classification-token row
}

torch::Tensor GuidanceBiTImpl::log_probs(const torch::Tensor& x, const torch::Tensor& t,
                                         const torch::Tensor& valid) {
  return torch::log_softmax(forward(x, t, valid), 1);
}

int type_s_label(int expression_label, SeqType type) {
  return expression_label * 2 + static_cast<int>(type);
}

int type_s_class_count(int n_expressions) { return n_expressions * 2; }

LabeledSequences label_corpus(const Corpus& corpus, const CorpusStats& stats,
                              bool order_sensitive) {
  LabeledSequences out;
  for (const auto& rec : corpus.records) {
    auto x = normalize(rec.landmarks, stats).reshape({rec.frames(), -1}).contiguous();
    out.sequences.push_back(x);
    out.labels.push_back(order_sensitive ? type_s_label(rec.label, rec.type) : rec.label);
  }
  return out;
}

namespace {

struct PaddedBatch {
  torch::Tensor x0;     // [B, Fmax, C]
  torch::Tensor valid;  // [B, Fmax] bool
};

PaddedBatch pad_batch(const std::vector<torch::Tensor>& sequences, const torch::Tensor& idx,
                      int C) {
  const auto B = idx.size(0);
  int64_t fmax = 0;
  for (int64_t b = 0; b < B; ++b)
    fmax = std::max(fmax, sequences[idx[b].item<int64_t>()].size(0));
  PaddedBatch batch;
  batch.x0 = torch::zeros({B, fmax, C});
  batch.valid = torch::zeros({B, fmax}, torch::kBool);
  for (int64_t b = 0; b < B; ++b) {
    const auto& s = sequences[idx[b].item<int64_t>()];
    batch.x0[b].narrow(0, 0, s.size(0)).copy_(s);
    batch.valid[b].narrow(0, 0, s.size(0)).fill_(true);
  }
  return batch;
}

}  // namespace

TrainResult train_guidance_classifier(GuidanceBiT& model, const LabeledSequences& data,
                                      const NoiseSchedule& sched, const TrainSettings& settings) {
  if (data.sequences.empty()) throw std::invalid_argument("train_guidance_classifier: no data");
  const int K = model->config().out_dim;
  std::set<int64_t> seen(data.labels.begin(), data.labels.end());
  for (int k = 0; k < K; ++k)
    if (!seen.count(k))
      throw std::invalid_argument("train_guidance_classifier: class " + std::to_string(k) +
                                  " missing from the corpus");

  const int C = model->config().frame_dim();
  auto labels = torch::tensor(data.labels, torch::kInt64);
  auto gen = at::detail::createCPUGenerator(settings.seed);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(settings.lr));
  model->train();

  TrainResult result;
  const auto n = static_cast<int64_t>(data.sequences.size());
  for (int step = 0; step < settings.iters; ++step) {
    auto idx = torch::randint(0, n, {settings.batch_size}, gen, torch::kInt64);
    auto batch = pad_batch(data.sequences, idx, C);
    auto y = labels.index_select(0, idx);
    auto t = torch::randint(1, sched.T + 1, {settings.batch_size}, gen, torch::kInt64);
    auto eps = torch::randn(batch.x0.sizes(), gen, batch.x0.options());
    auto x_t = q_sample_batch(batch.x0, t, eps, sched);

    opt.zero_grad();
    auto loss = torch::nll_loss(model->log_probs(x_t, t, batch.valid), y);
    loss.backward();
    opt.step();

    const double l = loss.item<double>();
    if (!std::isfinite(l)) throw std::runtime_error("train_guidance_classifier: loss diverged");
    result.loss_trace.push_back(l);
    if (settings.on_step && (step % settings.log_every == 0 || step + 1 == settings.iters))
      settings.on_step(step, l);
  }
  return result;
}

TrainResult train_text_head(GuidanceBiT& model, const std::vector<torch::Tensor>& sequences,
                            const std::vector<torch::Tensor>& targets,
                            const NoiseSchedule& sched, const TrainSettings& settings) {
  if (sequences.empty() || sequences.size() != targets.size())
    throw std::invalid_argument("train_text_head: sequences/targets mismatch");
  if (model->config().out_dim != kTextEmbedDim)
    throw std::invalid_argument("train_text_head: head output must be 512-dim");

  const int C = model->config().frame_dim();
  auto target_mat = torch::stack(targets);  // [n, 512]
  auto gen = at::detail::createCPUGenerator(settings.seed);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(settings.lr));
  model->train();

  TrainResult result;
  const auto n = static_cast<int64_t>(sequences.size());
  for (int step = 0; step < settings.iters; ++step) {
    auto idx = torch::randint(0, n, {settings.batch_size}, gen, torch::kInt64);
    auto batch = pad_batch(sequences, idx, C);
    auto tgt = target_mat.index_select(0, idx);
    auto t = torch::randint(1, sched.T + 1, {settings.batch_size}, gen, torch::kInt64);
    auto eps = torch::randn(batch.x0.sizes(), gen, batch.x0.options());
    auto x_t = q_sample_batch(batch.x0, t, eps, sched);

    opt.zero_grad();
    auto out = model->forward(x_t, t, batch.valid);
    auto loss = (1 - torch::cosine_similarity(out, tgt, 1)).mean();
    loss.backward();
    opt.step();

    const double l = loss.item<double>();
    if (!std::isfinite(l)) throw std::runtime_error("train_text_head: loss diverged");
    result.loss_trace.push_back(l);
    if (settings.on_step && (step % settings.log_every == 0 || step + 1 == settings.iters))
      settings.on_step(step, l);
  }
  return result;
}

}  // namespace fex4d
