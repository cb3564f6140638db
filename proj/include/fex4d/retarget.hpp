#pragma once

#include <torch/torch.h>

#include <vector>

#include "fex4d/corpus.hpp"
#include "fex4d/denoiser.hpp"
#include "fex4d/mesh_io.hpp"

namespace fex4d {

// Fixed mesh topology with precomputed per-vertex spiral index sequences.
struct MeshTopology {
  int64_t V = 0;
  std::vector<std::array<int64_t, 3>> triangles;
  torch::Tensor spirals;  // int64 [V, k]; row v starts at v itself
  int k = 0;
};

// Deterministic spiral orderings: each sequence starts at its own vertex,
// then the 1-ring counterclockwise from the lowest-index neighbor (chain head
// on boundaries), then successive rings; truncated or center-padded to k.
// Throws on a non-manifold edge, naming the offending edge.
MeshTopology build_spirals(int64_t V, const std::vector<std::array<int64_t, 3>>& triangles,
                           int k);

// Softmax cross-attention of one query row against the mesh feature rows.
// query: [B, d], features: [B, V, d] -> [B, d] convex combination.
torch::Tensor cross_attend(const torch::Tensor& query, const torch::Tensor& features);

// z = lambda_theta * z_id + delta_L, exactly.
torch::Tensor fuse_latent(const torch::Tensor& z_id, const torch::Tensor& delta_L,
                          const torch::Tensor& lambda_theta);

struct RetargetConfig {
  int n_landmarks = 68;
  int feature_dim = 128;   // encoder output width d
  int spiral_len = 9;
  bool use_attention = true;
  double coord_scale = 0.05;  // mm -> network units

  int frame_dim() const { return n_landmarks * 3; }
};

class SpiralConvImpl : public torch::nn::Module {
 public:
  SpiralConvImpl(const torch::Tensor& spirals, int in_ch, int out_ch);
  torch::Tensor forward(const torch::Tensor& x);  // [B, V, in] -> [B, V, out]
  torch::nn::Linear lin{nullptr};

 private:
  torch::Tensor spirals_;
  int64_t k_ = 0;
};
TORCH_MODULE(SpiralConv);

// Landmark-guided encoder-decoder: spiral encoder over the neutral mesh,
// cross-attention fusion of the landmark displacement with mesh features,
// latent shift z = lambda * z_id + delta_L, spiral decoder to per-vertex
// displacements.
class RetargetNetImpl : public torch::nn::Module {
 public:
  RetargetNetImpl(const MeshTopology& topology, RetargetConfig cfg);

  // mesh: [B, V, 3] neutral vertices (mm); delta_L: [B, N*3] landmark
  // displacements (mm). Returns delta_M: [B, V, 3] (mm).
  torch::Tensor forward(const torch::Tensor& mesh, const torch::Tensor& delta_L);

  const RetargetConfig& config() const { return cfg_; }
  int64_t vertex_count() const { return V_; }
  torch::Tensor lambda_theta() { return lambda_; }
  torch::nn::Linear final_layer() { return decoder_.back()->lin; }

 private:
  RetargetConfig cfg_;
  int64_t V_ = 0;
  std::vector<SpiralConv> encoder_;
  torch::nn::Linear query_fc_{nullptr};
  torch::nn::Linear z_id_fc_{nullptr};
  torch::Tensor lambda_;
  torch::nn::Linear dec_in_{nullptr};
  std::vector<SpiralConv> decoder_;
  int dec_ch0_ = 0;
};
TORCH_MODULE(RetargetNet);

struct MeshState {
  torch::Tensor M;        // [V, 3]
  torch::Tensor delta_M;  // [V, 3]
  torch::Tensor M_f;      // M + delta_M
};

MeshState retarget_frame(RetargetNet& model, const torch::Tensor& mesh,
                         const torch::Tensor& delta_L);

// Frame-by-frame retargeting of a landmark sequence onto a neutral mesh.
// The neutral landmark frame is subtracted to form delta_L per frame.
std::vector<MeshState> retarget_sequence(RetargetNet& model, const torch::Tensor& mesh,
                                         const SequenceRecord& landmarks,
                                         const torch::Tensor& neutral_landmarks);

// --- synthetic mesh corpus ----------------------------------------------

struct MeshSample {
  int subject = 0;
  int label = 0;
  torch::Tensor neutral;  // [V, 3]
  torch::Tensor delta_L;  // [N*3]
  torch::Tensor delta_M;  // [V, 3]
};

struct MeshCorpus {
  Mesh base;                          // template geometry + topology
  std::vector<int64_t> landmark_idx;  // 68 template vertex ids
  std::vector<MeshSample> train;
  std::vector<MeshSample> held_out;   // unseen identities
};

struct MeshCorpusOptions {
  int grid_w = 20;
  int grid_h = 15;
  int n_subjects = 6;       // last one held out
  int n_classes = 3;
  int samples_per_subject = 40;
  int n_landmarks = 68;
  double amplitude = 8.0;   // mm
  double identity_gain = 1.0;  // geometry-dependent displacement modulation
};

// Low-poly procedural face patch with blendshape-style class deformations
// whose local amplitude depends on the subject geometry.
MeshCorpus make_synthetic_mesh_corpus(uint64_t seed, const MeshCorpusOptions& opts = {});

TrainResult train_retarget(RetargetNet& model, const std::vector<MeshSample>& samples,
                           const std::vector<int64_t>& landmark_idx,
                           double landmark_weight, const TrainSettings& settings);

// Mean per-vertex Euclidean error of predicted against true displacements.
double retarget_error(RetargetNet& model, const std::vector<MeshSample>& samples);

}  // namespace fex4d
