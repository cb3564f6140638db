#include "fex4d/retarget.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

namespace fex4d {

namespace {

// Ordered 1-ring of a vertex from oriented triangle fans. next[a] = b means
// triangle (v, a, b) exists, so b follows a counterclockwise around v.
struct Ring {
  std::vector<int64_t> ordered;
};

Ring one_ring(int64_t v, const std::map<int64_t, int64_t>& next) {
  Ring ring;
  if (next.empty()) return ring;
  std::set<int64_t> has_incoming;
  for (const auto& [from, to] : next) has_incoming.insert(to);

  int64_t start = -1;
  for (const auto& [from, to] : next) {
    if (!has_incoming.count(from)) {  // boundary chain head
      start = from;
      break;
    }
  }
  const bool closed = start < 0;
  if (closed) start = next.begin()->first;  // smallest index (map is ordered)

  int64_t cur = start;
  while (true) {
    ring.ordered.push_back(cur);
    auto it = next.find(cur);
    if (it == next.end()) break;
    cur = it->second;
    if (cur == start) break;
  }
  return ring;
}

}  // namespace

MeshTopology build_spirals(int64_t V, const std::vector<std::array<int64_t, 3>>& triangles,
                           int k) {
  if (k < 1) throw std::invalid_argument("build_spirals: k must be >= 1");

  // Manifold check: every undirected edge in at most two triangles.
  std::map<std::pair<int64_t, int64_t>, int> edge_count;
  for (const auto& tri : triangles) {
    for (int i = 0; i < 3; ++i) {
      int64_t a = tri[i], b = tri[(i + 1) % 3];
      auto key = std::minmax(a, b);
      if (++edge_count[{key.first, key.second}] > 2)
        throw std::runtime_error("build_spirals: non-manifold edge (" + std::to_string(a) +
                                 ", " + std::to_string(b) + ")");
    }
  }

  std::vector<std::map<int64_t, int64_t>> next(V);
  for (const auto& tri : triangles) {
    for (int i = 0; i < 3; ++i) {
      const int64_t v = tri[i], a = tri[(i + 1) % 3], b = tri[(i + 2) % 3];
      if (v < 0 || v >= V) throw std::invalid_argument("build_spirals: vertex index out of range");
      auto [it, inserted] = next[v].emplace(a, b);
      if (!inserted && it->second != b)
        throw std::runtime_error("build_spirals: non-manifold edge (" + std::to_string(v) +
                                 ", " + std::to_string(a) + ")");
    }
  }

  std::vector<Ring> rings(V);
  for (int64_t v = 0; v < V; ++v) rings[v] = one_ring(v, next[v]);

  MeshTopology topo;
  topo.V = V;
  topo.triangles = triangles;
  topo.k = k;
  topo.spirals = torch::empty({V, k}, torch::kInt64);
  auto acc = topo.spirals.accessor<int64_t, 2>();
  for (int64_t v = 0; v < V; ++v) {
    std::vector<int64_t> spiral{v};
    std::set<int64_t> seen{v};
    std::vector<int64_t> frontier{v};
    while (static_cast<int>(spiral.size()) < k && !frontier.empty()) {
      std::vector<int64_t> next_frontier;
      for (int64_t u : frontier) {
        for (int64_t w : rings[u].ordered) {
          if (seen.insert(w).second) {
            spiral.push_back(w);
            next_frontier.push_back(w);
          }
        }
      }
      frontier = std::move(next_frontier);
    }
    for (int i = 0; i < k; ++i)
      acc[v][i] = i < static_cast<int>(spiral.size()) ? spiral[i] : v;  // center-pad
  }
  return topo;
}

torch::Tensor cross_attend(const torch::Tensor& query, const torch::Tensor& features) {
  if (query.size(-1) != features.size(-1))
    throw std::invalid_argument("cross_attend: dimension mismatch");
  const double d = static_cast<double>(features.size(-1));
  auto scores = torch::matmul(features, query.unsqueeze(-1)).squeeze(-1) / std::sqrt(d);
  auto weights = torch::softmax(scores, -1);  // [B, V]
  return torch::matmul(weights.unsqueeze(1), features).squeeze(1);
}

torch::Tensor fuse_latent(const torch::Tensor& z_id, const torch::Tensor& delta_L,
                          const torch::Tensor& lambda_theta) {
  return lambda_theta * z_id + delta_L;
}

SpiralConvImpl::SpiralConvImpl(const torch::Tensor& spirals, int in_ch, int out_ch)
    : spirals_(spirals), k_(spirals.size(1)) {
  lin = register_module("lin", torch::nn::Linear(static_cast<int>(k_) * in_ch, out_ch));
  spirals_ = register_buffer("spirals", spirals_);
}

torch::Tensor SpiralConvImpl::forward(const torch::Tensor& x) {
  const auto B = x.size(0), V = x.size(1), C = x.size(2);
  auto gathered = x.index_select(1, spirals_.flatten()).view({B, V, k_ * C});
  return lin->forward(gathered);
}

RetargetNetImpl::RetargetNetImpl(const MeshTopology& topology, RetargetConfig cfg)
    : cfg_(cfg), V_(topology.V) {
  const int d = cfg_.feature_dim;
  const std::vector<int> enc_plan = {3, std::max(8, d / 8), std::max(8, d / 4),
                                     std::max(8, d / 2), d, d};
  for (size_t i = 0; i + 1 < enc_plan.size(); ++i) {
    encoder_.push_back(SpiralConv(topology.spirals, enc_plan[i], enc_plan[i + 1]));
    register_module("enc_" + std::to_string(i), encoder_.back());
  }

  query_fc_ = register_module("query_fc", torch::nn::Linear(cfg_.frame_dim(), d));
  z_id_fc_ = register_module("z_id_fc", torch::nn::Linear(d, cfg_.frame_dim()));
  lambda_ = register_parameter("lambda_theta", torch::ones({1}));

  dec_ch0_ = std::max(8, d / 2);
  dec_in_ = register_module("dec_in",
                            torch::nn::Linear(cfg_.frame_dim(),
                                              static_cast<int>(V_) * dec_ch0_));
  const std::vector<int> dec_plan = {dec_ch0_, dec_ch0_, std::max(8, dec_ch0_ / 2),
                                     std::max(8, dec_ch0_ / 2), std::max(8, dec_ch0_ / 4), 3};
  for (size_t i = 0; i + 1 < dec_plan.size(); ++i) {
    decoder_.push_back(SpiralConv(topology.spirals, dec_plan[i], dec_plan[i + 1]));
    register_module("dec_" + std::to_string(i), decoder_.back());
  }
}

torch::Tensor RetargetNetImpl::forward(const torch::Tensor& mesh,
                                       const torch::Tensor& delta_L) {
  if (mesh.size(1) != V_)
    throw std::invalid_argument("retarget: topology mismatch, expected " + std::to_string(V_) +
                                " vertices, got " + std::to_string(mesh.size(1)));
  const double s = cfg_.coord_scale;
  auto centered = (mesh - mesh.mean(1, /*keepdim=*/true)) * s;
  auto dl = delta_L * s;

  auto z = dl;
  if (cfg_.use_attention) {
    auto fe = centered;
    for (size_t i = 0; i < encoder_.size(); ++i) {
      fe = encoder_[i]->forward(fe);
      if (i + 1 < encoder_.size()) fe = torch::elu(fe);
    }
    auto att = cross_attend(query_fc_->forward(dl), fe);
    z = fuse_latent(z_id_fc_->forward(att), dl, lambda_);
  }

  auto h = torch::elu(dec_in_->forward(z)).view({mesh.size(0), V_, dec_ch0_});
  for (size_t i = 0; i < decoder_.size(); ++i) {
    h = decoder_[i]->forward(h);
    if (i + 1 < decoder_.size()) h = torch::elu(h);
  }
  return h / s;
}

MeshState retarget_frame(RetargetNet& model, const torch::Tensor& mesh,
                         const torch::Tensor& delta_L) {
  torch::NoGradGuard ng;
  model->eval();
  MeshState state;
  state.M = mesh;
  state.delta_M = model->forward(mesh.unsqueeze(0), delta_L.reshape({1, -1})).squeeze(0);
  state.M_f = state.M + state.delta_M;
  return state;
}

std::vector<MeshState> retarget_sequence(RetargetNet& model, const torch::Tensor& mesh,
                                         const SequenceRecord& landmarks,
                                         const torch::Tensor& neutral_landmarks) {
  std::vector<MeshState> out;
  out.reserve(landmarks.frames());
  for (int64_t f = 0; f < landmarks.frames(); ++f) {
    auto delta_L = (landmarks.landmarks[f] - neutral_landmarks).reshape({-1});
    out.push_back(retarget_frame(model, mesh, delta_L));
  }
  return out;
}

namespace {

class GaussStream {
 public:
  explicit GaussStream(uint64_t seed) : rng_(seed) {}
  double uniform() { return (rng_() >> 11) * (1.0 / 9007199254740992.0); }
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 rng_;
};

// Smooth random field over vertices: a few gaussian lobes with random
// centers, radii, and directions.
torch::Tensor bump_field(const torch::Tensor& verts, GaussStream& rng, int lobes,
                         double magnitude) {
  auto field = torch::zeros_like(verts);
  auto lo = std::get<0>(verts.min(0)), hi = std::get<0>(verts.max(0));
  auto span = (hi - lo).to(torch::kFloat64);
  for (int l = 0; l < lobes; ++l) {
    auto center = torch::empty({3}, torch::kFloat32);
    for (int i = 0; i < 3; ++i)
      center[i] = static_cast<float>(lo[i].item<float>() + rng.uniform() * span[i].item<double>());
    const double radius = 0.15 + 0.25 * rng.uniform();
    auto dir = torch::empty({3}, torch::kFloat32);
    for (int i = 0; i < 3; ++i) dir[i] = static_cast<float>(rng.normal());
    dir = dir / dir.norm();
    auto scale = span.norm().item<double>() * radius;
    auto dist2 = (verts - center).pow(2).sum(1) / (scale * scale);
    field += torch::exp(-dist2).unsqueeze(1) * dir.unsqueeze(0) * magnitude;
  }
  return field;
}

}  // namespace

MeshCorpus make_synthetic_mesh_corpus(uint64_t seed, const MeshCorpusOptions& opts) {
  const int W = opts.grid_w, H = opts.grid_h;
  const int64_t V = static_cast<int64_t>(W) * H;

  // Curved rectangular patch, coordinates in millimeters.
  auto verts = torch::empty({V, 3}, torch::kFloat32);
  for (int j = 0; j < H; ++j) {
    for (int i = 0; i < W; ++i) {
      const double x = (i - (W - 1) / 2.0) * 8.0;
      const double y = (j - (H - 1) / 2.0) * 8.0;
      const double z = 40.0 * std::exp(-(x * x + y * y) / (60.0 * 60.0));
      const int64_t v = static_cast<int64_t>(j) * W + i;
      verts[v][0] = static_cast<float>(x);
      verts[v][1] = static_cast<float>(y);
      verts[v][2] = static_cast<float>(z);
    }
  }
  MeshCorpus corpus;
  corpus.base.vertices = verts;
  for (int j = 0; j + 1 < H; ++j) {
    for (int i = 0; i + 1 < W; ++i) {
      const int64_t a = static_cast<int64_t>(j) * W + i;
      const int64_t b = a + 1, c = a + W, d = a + W + 1;
      corpus.base.triangles.push_back({a, b, d});
      corpus.base.triangles.push_back({a, d, c});
    }
  }

  // Landmarks: evenly spread template vertex ids.
  for (int n = 0; n < opts.n_landmarks; ++n)
    corpus.landmark_idx.push_back(n * (V - 1) / (opts.n_landmarks - 1));
  auto lm = torch::tensor(corpus.landmark_idx, torch::kInt64);

  GaussStream rng(seed);
  std::vector<torch::Tensor> subjects;
  for (int s = 0; s < opts.n_subjects; ++s)
    subjects.push_back(verts + bump_field(verts, rng, 4, 6.0));

  std::vector<torch::Tensor> class_fields;
  for (int c = 0; c < opts.n_classes; ++c)
    class_fields.push_back(bump_field(verts, rng, 3, opts.amplitude));

  const auto z_tmpl = verts.select(1, 2);
  for (int s = 0; s < opts.n_subjects; ++s) {
    // Geometry-dependent modulation: displacement amplitude scales with the
    // subject's local height offset from the template.
    auto gain = 1.0 + opts.identity_gain * (subjects[s].select(1, 2) - z_tmpl) / 6.0;
    for (int i = 0; i < opts.samples_per_subject; ++i) {
      MeshSample sample;
      sample.subject = s;
      sample.label = static_cast<int>(rng.uniform() * opts.n_classes) % opts.n_classes;
      const double ramp = 0.2 + 0.8 * rng.uniform();
      sample.neutral = subjects[s];
      sample.delta_M = class_fields[sample.label] * gain.unsqueeze(1) * ramp;
      sample.delta_L = sample.delta_M.index_select(0, lm).reshape({-1});
      (s + 1 == opts.n_subjects ? corpus.held_out : corpus.train).push_back(std::move(sample));
    }
  }
  return corpus;
}

TrainResult train_retarget(RetargetNet& model, const std::vector<MeshSample>& samples,
                           const std::vector<int64_t>& landmark_idx,
                           double landmark_weight, const TrainSettings& settings) {
  if (samples.empty()) throw std::invalid_argument("train_retarget: no samples");
  auto lm = torch::tensor(landmark_idx, torch::kInt64);
  auto gen = at::detail::createCPUGenerator(settings.seed);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(settings.lr));
  model->train();

  TrainResult result;
  const auto n = static_cast<int64_t>(samples.size());
  for (int step = 0; step < settings.iters; ++step) {
    auto idx = torch::randint(0, n, {settings.batch_size}, gen, torch::kInt64);
    std::vector<torch::Tensor> meshes, dls, dms;
    for (int b = 0; b < settings.batch_size; ++b) {
      const auto& s = samples[idx[b].item<int64_t>()];
      meshes.push_back(s.neutral);
      dls.push_back(s.delta_L);
      dms.push_back(s.delta_M);
    }
    auto mesh = torch::stack(meshes);
    auto target = torch::stack(dms);

    opt.zero_grad();
    auto pred = model->forward(mesh, torch::stack(dls));
    auto loss = torch::l1_loss(pred, target);
    if (landmark_weight > 0) {
      loss = loss + landmark_weight * torch::l1_loss(pred.index_select(1, lm),
                                                     target.index_select(1, lm));
    }
    loss.backward();
    opt.step();

    const double l = loss.item<double>();
    if (!std::isfinite(l)) throw std::runtime_error("train_retarget: loss diverged");
    result.loss_trace.push_back(l);
    if (settings.on_step && (step % settings.log_every == 0 || step + 1 == settings.iters))
      settings.on_step(step, l);
  }
  return result;
}

double retarget_error(RetargetNet& model, const std::vector<MeshSample>& samples) {
  torch::NoGradGuard ng;
  model->eval();
  double total = 0.0;
  int64_t count = 0;
  for (const auto& s : samples) {
    auto pred = model->forward(s.neutral.unsqueeze(0), s.delta_L.unsqueeze(0)).squeeze(0);
    total += (pred - s.delta_M).norm(2, 1).sum().item<double>();
    count += s.delta_M.size(0);
  }
  return total / static_cast<double>(count);
}

}  // namespace fex4d
