#pragma once

#include <string>

#include "fex4d/denoiser.hpp"
#include "fex4d/eval.hpp"
#include "fex4d/guidance.hpp"
#include "fex4d/retarget.hpp"

namespace fex4d {

// Versioned checkpoint containers holding the model parameters together with
// everything needed to sample: architecture config, schedule parameters, and
// the normalization statistics of the training split.

struct ScheduleParams {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
};

struct DenoiserCheckpoint {
  SequenceDenoiser model{nullptr};
  ScheduleParams schedule;
  CorpusStats stats;
};

struct GuidanceCheckpoint {
  GuidanceBiT model{nullptr};
  ScheduleParams schedule;
  CorpusStats stats;
};

struct ICCheckpoint {
  IndependentClassifier model{nullptr};
  CorpusStats stats;
  bool order_sensitive = false;
};

struct RetargetCheckpoint {
  RetargetNet model{nullptr};
  MeshTopology topology;
  std::vector<int64_t> landmark_idx;
};

void save_denoiser(const std::string& path, SequenceDenoiser& model,
                   const ScheduleParams& schedule, const CorpusStats& stats);
DenoiserCheckpoint load_denoiser(const std::string& path);

void save_guidance(const std::string& path, GuidanceBiT& model, const ScheduleParams& schedule,
                   const CorpusStats& stats);
GuidanceCheckpoint load_guidance(const std::string& path);

void save_ic(const std::string& path, IndependentClassifier& model, const CorpusStats& stats,
             bool order_sensitive);
ICCheckpoint load_ic(const std::string& path);

void save_retarget(const std::string& path, RetargetNet& model, const MeshTopology& topology,
                   const std::vector<int64_t>& landmark_idx);
RetargetCheckpoint load_retarget(const std::string& path);

}  // namespace fex4d
