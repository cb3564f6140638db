#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace fex4d {

enum class SeqType : uint8_t { N2E = 0, E2N = 1 };

struct SequenceRecord {
  torch::Tensor landmarks;  // [F, N, 3] float32, millimeters
  int label = 0;
  SeqType type = SeqType::N2E;
  int subject = -1;
  std::string source;

  int64_t frames() const { return landmarks.size(0); }
  int64_t n_landmarks() const { return landmarks.size(1); }
};

struct Corpus {
  std::vector<SequenceRecord> records;
  int n_classes = 0;
};

// Per-coordinate standardization statistics over a training split.
struct CorpusStats {
  torch::Tensor mean;  // [N, 3] float32
  torch::Tensor std;   // [N, 3] float32, epsilon-floored
};

// Linear resampling on a uniform time grid; endpoints are preserved exactly.
SequenceRecord resample_sequence(const SequenceRecord& rec, int target_F);

// Neutral face convention: first frame for N2E, last frame for E2N.
torch::Tensor extract_neutral(const SequenceRecord& rec);

struct SyntheticOptions {
  int n_subjects = 8;
  int min_frames = 35;
  int max_frames = 45;
  int n_landmarks = 68;
  double class_amplitude = 12.0;  // mm, displacement magnitude per class
  double jitter = 0.15;           // mm, per-frame observation noise
};

// Deterministic desk-scale substitute for the licensed 4D corpora:
// per-subject base geometry, a class-shared progression ramp, and per-class
// action fields animated by an onset-apex-offset bump; emits both N2E and
// E2N sequences.
Corpus make_synthetic_corpus(int n_sequences, int n_classes, uint64_t seed,
                             const SyntheticOptions& opts = {});

CorpusStats compute_stats(const Corpus& corpus);
torch::Tensor normalize(const torch::Tensor& landmarks, const CorpusStats& stats);
torch::Tensor denormalize(const torch::Tensor& landmarks, const CorpusStats& stats);

// Binary sequence format: magic "4DFM", u32 version, u32 F, u32 N, u32 label,
// u8 type, then F*N*3 float32 little-endian. One sequence per file; a corpus
// directory holds a manifest.txt listing its files.
void write_sequence(const std::string& path, const SequenceRecord& rec);
SequenceRecord read_sequence(const std::string& path);
void write_corpus(const std::string& dir, const Corpus& corpus);
Corpus read_corpus(const std::string& dir);

}  // namespace fex4d
