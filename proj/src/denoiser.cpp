#include "fex4d/denoiser.hpp"

#include <cmath>

namespace fex4d {

void DenoiserConfig::validate() const {
  if (model_dim % heads != 0)
    throw std::invalid_argument("denoiser: model_dim must be divisible by heads");
  if (layers < 1 || max_len < 1 || n_landmarks < 1)
    throw std::invalid_argument("denoiser: bad architecture settings");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("denoiser: dropout must be in [0,1)");
}

torch::Tensor sinusoidal_encoding(int positions, int dim) {
  auto table = torch::zeros({positions, dim}, torch::kFloat32);
  for (int p = 0; p < positions; ++p) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / dim);
      table[p][2 * i] = static_cast<float>(std::sin(p * freq));
      table[p][2 * i + 1] = static_cast<float>(std::cos(p * freq));
    }
  }
  return table;
}

SequenceDenoiserImpl::SequenceDenoiserImpl(DenoiserConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int D = cfg_.model_dim;
  feature_embed_ = register_module("feature_embed", torch::nn::Linear(cfg_.frame_dim(), D));
  time_embed_1_ = register_module("time_embed_1", torch::nn::Linear(D, D));
  time_embed_2_ = register_module("time_embed_2", torch::nn::Linear(D, D));
  auto layer_opts = torch::nn::TransformerEncoderLayerOptions(D, cfg_.heads)
                        .dim_feedforward(cfg_.feedforward_dim)
                        .dropout(cfg_.dropout);
  encoder_ = register_module(
      "encoder", torch::nn::TransformerEncoder(torch::nn::TransformerEncoderLayer(layer_opts),
                                               cfg_.layers));
  out_proj_ = register_module("out_proj", torch::nn::Linear(D, cfg_.frame_dim()));
  torch::NoGradGuard ng;
  out_proj_->weight.zero_();
  out_proj_->bias.zero_();

  pos_table_ = register_buffer("pos_table", sinusoidal_encoding(cfg_.max_len, D));
  // large enough for any full-scale step count
  time_table_ = register_buffer("time_table", sinusoidal_encoding(4096, D));
}

torch::Tensor SequenceDenoiserImpl::embed_inputs(const torch::Tensor& x, const torch::Tensor& t) {
  const auto F = x.size(1);
  if (F > cfg_.max_len)
    throw std::invalid_argument("denoiser: sequence length " + std::to_string(F) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
  auto te = time_embed_2_->forward(torch::silu(time_embed_1_->forward(
      time_table_.index_select(0, t))));                       // [B, D]
  auto pe = pos_table_.narrow(0, 0, F);                        // [F, D]
  auto fe = feature_embed_->forward(x);                        // [B, F, D]
  return fe + pe.unsqueeze(0) + te.unsqueeze(1);
}

torch::Tensor SequenceDenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& t,
                                            const torch::Tensor& valid) {
  auto h = embed_inputs(x, t).transpose(0, 1);  // [F, B, D]
  torch::Tensor key_padding = {};
  if (valid.defined()) key_padding = ~valid;    // true = pad
  h = encoder_->forward(h, {}, key_padding);
  return out_proj_->forward(h.transpose(0, 1));
}

std::vector<torch::Tensor> flatten_corpus(const Corpus& corpus, const CorpusStats& stats) {
  std::vector<torch::Tensor> out;
  out.reserve(corpus.records.size());
  for (const auto& rec : corpus.records) {
    auto x = normalize(rec.landmarks, stats);
    out.push_back(x.reshape({rec.frames(), -1}).contiguous());
  }
  return out;
}

TrainResult train_denoiser(SequenceDenoiser& model, const std::vector<torch::Tensor>& sequences,
                           const NoiseSchedule& sched, const TrainSettings& settings) {
  if (sequences.empty()) throw std::invalid_argument("train_denoiser: empty corpus");
  const int C = model->config().frame_dim();
  for (const auto& s : sequences)
    if (s.size(0) > model->config().max_len)
      throw std::invalid_argument("train_denoiser: sequence exceeds max_len");

  auto gen = at::detail::createCPUGenerator(settings.seed);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(settings.lr));
  model->train();

  TrainResult result;
  const auto n = static_cast<int64_t>(sequences.size());
  for (int step = 0; step < settings.iters; ++step) {
    auto idx = torch::randint(0, n, {settings.batch_size}, gen, torch::kInt64);
    int64_t fmax = 0;
    for (int b = 0; b < settings.batch_size; ++b)
      fmax = std::max(fmax, sequences[idx[b].item<int64_t>()].size(0));

    auto x0 = torch::zeros({settings.batch_size, fmax, C});
    auto valid = torch::zeros({settings.batch_size, fmax}, torch::kBool);
    for (int b = 0; b < settings.batch_size; ++b) {
      const auto& s = sequences[idx[b].item<int64_t>()];
      x0[b].narrow(0, 0, s.size(0)).copy_(s);
      valid[b].narrow(0, 0, s.size(0)).fill_(true);
    }

    auto t = torch::randint(1, sched.T + 1, {settings.batch_size}, gen, torch::kInt64);
    auto eps = torch::randn(x0.sizes(), gen, x0.options());
    auto x_t = q_sample_batch(x0, t, eps, sched);

    opt.zero_grad();
    auto eps_hat = model->forward(x_t, t, valid);
    auto m = valid.unsqueeze(-1).to(torch::kFloat32);
    auto loss = ((eps_hat - eps).pow(2) * m).sum() / m.sum() / C;
    loss.backward();
    opt.step();

    const double l = loss.item<double>();
    if (!std::isfinite(l)) throw std::runtime_error("train_denoiser: loss diverged");
    result.loss_trace.push_back(l);
    if (settings.on_step && (step % settings.log_every == 0 || step + 1 == settings.iters))
      settings.on_step(step, l);
  }
  return result;
}

}  // namespace fex4d
