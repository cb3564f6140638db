#pragma once

#include <cstdint>
#include <string>

namespace fex4d {

// Every hyperparameter of the pipeline in one flat, validated bag.
// Defaults are the full-scale configuration; desk_profile() shrinks them to
// values the test suite can train in minutes on a CPU.
struct RunConfig {
  // schedule
  int schedule_T = 2000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // data
  int n_landmarks = 68;
  int seq_len = 40;
  int seq_len_min = 35;
  int seq_len_max = 45;

  // denoiser
  int denoiser_layers = 6;
  int denoiser_heads = 8;
  int denoiser_dim = 256;
  int denoiser_ff_dim = 1024;
  double denoiser_dropout = 0.1;
  int max_len = 64;

  // training
  double lr = 1e-4;
  int batch_size = 256;
  int train_iters = 200000;

  // guidance networks (half the denoiser width by default)
  int guidance_layers = 3;
  int guidance_heads = 4;
  int guidance_dim = 128;
  int guidance_ff_dim = 512;

  // guided sampling
  double lambda = 0.01;
  int opt_steps = 3;
  double opt_lr = 0.05;
  int harmonization_iters = 5;

  // mesh retargeting
  int spiral_len = 9;
  int retarget_dim = 128;
  double retarget_landmark_weight = 1.0;

  // independent classifier
  int ic_hidden = 128;
  int ic_epochs = 50;

  std::string to_text() const;          // canonical key=value serialization
  uint64_t hash() const;                // FNV-1a of the canonical text
  void validate() const;                // throws on out-of-range fields
};

// Shrunken profile used by the acceptance suite: T=200, model_dim 128,
// batch 32, 5k iterations.
RunConfig desk_profile();

// Parse a key=value file, then apply FEX4D_<KEY> environment overrides.
// Unknown keys and malformed values are rejected.
RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

}  // namespace fex4d
