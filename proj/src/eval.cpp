#include "fex4d/eval.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

namespace fex4d {

IndependentClassifierImpl::IndependentClassifierImpl(ICConfig cfg) : cfg_(cfg) {
  lstm_ = register_module(
      "lstm", torch::nn::LSTM(torch::nn::LSTMOptions(cfg_.input_dim, cfg_.hidden)
                                  .num_layers(1)
                                  .batch_first(true)));
  head_ = register_module("head", torch::nn::Linear(cfg_.hidden, cfg_.classes));
}

torch::Tensor IndependentClassifierImpl::forward(const torch::Tensor& x,
                                                 const torch::Tensor& lengths) {
  auto out = std::get<0>(lstm_->forward(x));  // [B, F, H]
  auto gather_idx = (lengths - 1).view({-1, 1, 1}).expand({x.size(0), 1, cfg_.hidden});
  auto last = out.gather(1, gather_idx).squeeze(1);  // state at the last valid frame
  return head_->forward(last);
}

namespace {

struct PaddedIC {
  torch::Tensor x;        // [B, Fmax, C]
  torch::Tensor lengths;  // [B]
};

PaddedIC pad_for_ic(const std::vector<torch::Tensor>& sequences,
                    const std::vector<int64_t>& which) {
  int64_t fmax = 0;
  const auto C = sequences.front().size(1);
  for (auto i : which) fmax = std::max(fmax, sequences[i].size(0));
  PaddedIC out;
  out.x = torch::zeros({static_cast<int64_t>(which.size()), fmax, C});
  out.lengths = torch::empty({static_cast<int64_t>(which.size())}, torch::kInt64);
  for (size_t b = 0; b < which.size(); ++b) {
    const auto& s = sequences[which[b]];
    out.x[b].narrow(0, 0, s.size(0)).copy_(s);
    out.lengths[b] = s.size(0);
  }
  return out;
}

double accuracy_on(IndependentClassifier& model, const LabeledSequences& data,
                   const std::vector<int64_t>& which) {
  if (which.empty()) return 0.0;
  torch::NoGradGuard ng;
  model->eval();
  int64_t correct = 0;
  for (size_t start = 0; start < which.size(); start += 64) {
    std::vector<int64_t> chunk(which.begin() + start,
                               which.begin() + std::min(start + 64, which.size()));
    auto batch = pad_for_ic(data.sequences, chunk);
    auto pred = model->forward(batch.x, batch.lengths).argmax(1);
    for (size_t b = 0; b < chunk.size(); ++b)
      if (pred[b].item<int64_t>() == data.labels[chunk[b]]) ++correct;
  }
  return static_cast<double>(correct) / which.size();
}

}  // namespace

ICTrainResult train_ic(IndependentClassifier& model, const LabeledSequences& data,
                       const ICTrainSettings& settings) {
  if (data.sequences.empty()) throw std::invalid_argument("train_ic: no data");
  const int K = model->config().classes;
  std::set<int64_t> seen(data.labels.begin(), data.labels.end());
  for (int k = 0; k < K; ++k)
    if (!seen.count(k))
      throw std::invalid_argument("train_ic: class " + std::to_string(k) + " missing");

  auto gen = at::detail::createCPUGenerator(settings.seed);
  const auto n = static_cast<int64_t>(data.sequences.size());
  auto perm = torch::randperm(n, gen, torch::kInt64);
  const auto n_val = std::max<int64_t>(1, static_cast<int64_t>(n * settings.val_fraction));
  std::vector<int64_t> val_idx, train_idx;
  for (int64_t i = 0; i < n; ++i)
    (i < n_val ? val_idx : train_idx).push_back(perm[i].item<int64_t>());

  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(settings.lr));
  auto labels = torch::tensor(data.labels, torch::kInt64);

  double best_val = -1.0;
  int since_best = 0;
  std::vector<torch::Tensor> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (const auto& p : model->parameters()) best_params.push_back(p.detach().clone());
  };

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    model->train();
    auto order = torch::randperm(static_cast<int64_t>(train_idx.size()), gen, torch::kInt64);
    for (int64_t start = 0; start < order.size(0); start += settings.batch_size) {
      std::vector<int64_t> chunk;
      for (int64_t i = start; i < std::min<int64_t>(start + settings.batch_size, order.size(0));
           ++i)
        chunk.push_back(train_idx[order[i].item<int64_t>()]);
      auto batch = pad_for_ic(data.sequences, chunk);
      auto y = labels.index_select(0, torch::tensor(chunk, torch::kInt64));
      opt.zero_grad();
      auto loss = torch::cross_entropy_loss(model->forward(batch.x, batch.lengths), y);
      loss.backward();
      opt.step();
    }
    const double val = accuracy_on(model, data, val_idx);
    if (val > best_val) {
      best_val = val;
      since_best = 0;
      snapshot();
    } else if (++since_best >= settings.patience) {
      break;
    }
  }

  if (!best_params.empty()) {
    torch::NoGradGuard ng;
    auto params = model->parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(best_params[i]);
  }
  ICTrainResult result;
  result.held_out_accuracy = best_val;
  return result;
}

double ic_accuracy(IndependentClassifier& model, const LabeledSequences& data) {
  std::vector<int64_t> all(data.sequences.size());
  std::iota(all.begin(), all.end(), 0);
  return accuracy_on(model, data, all);
}

torch::Tensor ic_features(IndependentClassifier& model,
                          const std::vector<torch::Tensor>& sequences) {
  torch::NoGradGuard ng;
  model->eval();
  std::vector<torch::Tensor> feats;
  std::vector<int64_t> all(sequences.size());
  std::iota(all.begin(), all.end(), 0);
  for (size_t start = 0; start < all.size(); start += 64) {
    std::vector<int64_t> chunk(all.begin() + start,
                               all.begin() + std::min(start + 64, all.size()));
    auto batch = pad_for_ic(sequences, chunk);
    feats.push_back(model->features(batch.x, batch.lengths));
  }
  return torch::cat(feats);
}

double fid(const torch::Tensor& features_a, const torch::Tensor& features_b) {
  if (!features_a.isfinite().all().item<bool>() || !features_b.isfinite().all().item<bool>())
    throw std::invalid_argument("fid: non-finite features");
  auto a = features_a.to(torch::kFloat64);
  auto b = features_b.to(torch::kFloat64);
  const auto D = a.size(1);
  if (a.size(0) < D + 1 || b.size(0) < D + 1)
    std::cerr << "fid: warning, fewer than D+1 samples; covariance is rank-deficient\n";

  auto mu_a = a.mean(0), mu_b = b.mean(0);
  auto ca = a - mu_a, cb = b - mu_b;
  auto cov_a = ca.t().matmul(ca) / std::max<int64_t>(1, a.size(0) - 1);
  auto cov_b = cb.t().matmul(cb) / std::max<int64_t>(1, b.size(0) - 1);
  cov_a = 0.5 * (cov_a + cov_a.t());
  cov_b = 0.5 * (cov_b + cov_b.t());

  auto [eva, veca] = torch::linalg_eigh(cov_a);
  auto sqrt_a = veca.matmul(torch::diag(eva.clamp_min(0).sqrt())).matmul(veca.t());
  auto inner = sqrt_a.matmul(cov_b).matmul(sqrt_a);
  inner = 0.5 * (inner + inner.t());
  auto [evi, _] = torch::linalg_eigh(inner);
  const double trace_sqrt = evi.clamp_min(0).sqrt().sum().item<double>();

  const double mean_term = (mu_a - mu_b).pow(2).sum().item<double>();
  const double value = mean_term + cov_a.trace().item<double>() +
                       cov_b.trace().item<double>() - 2.0 * trace_sqrt;
  return std::max(0.0, value);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "accuracy=" << accuracy << "\n" << "fid=" << fid << "\n";
  return os.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\naccuracy," << accuracy << "\nfid," << fid << "\n";
  return os.str();
}

EvalReport evaluate_generation(IndependentClassifier& ic, const LabeledSequences& generated,
                               const LabeledSequences& reference) {
  const int K = ic->config().classes;
  for (auto y : generated.labels)
    if (y < 0 || y >= K)
      throw std::invalid_argument("evaluate_generation: label " + std::to_string(y) +
                                  " outside the IC label space");
  EvalReport report;
  report.accuracy = ic_accuracy(ic, generated);
  report.fid = fid(ic_features(ic, generated.sequences), ic_features(ic, reference.sequences));
  return report;
}

}  // namespace fex4d
