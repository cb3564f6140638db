#pragma once

#include <torch/torch.h>

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fex4d {

inline constexpr int kTextEmbedDim = 512;

// Seam for the external text encoder: prompt -> unit-norm 512-d vector.
class TextEmbeddingProvider {
 public:
  virtual ~TextEmbeddingProvider() = default;
  virtual torch::Tensor embed(const std::string& prompt) = 0;
};

// Deterministic test substitute: hashes the prompt into a pseudo-random unit
// vector. Identical prompts always map to identical vectors.
class StubTextEmbedding : public TextEmbeddingProvider {
 public:
  torch::Tensor embed(const std::string& prompt) override;
};

// Provider backed by the embedding exchange file written by an out-of-process
// encoder adapter. Missing prompts surface as a provider error.
class FileTextEmbedding : public TextEmbeddingProvider {
 public:
  explicit FileTextEmbedding(const std::string& path);
  torch::Tensor embed(const std::string& prompt) override;

 private:
  std::vector<std::pair<std::string, torch::Tensor>> entries_;
};

// Embedding exchange file: magic "4DTE", u32 record count, then per prompt a
// u32 UTF-8 byte length, the prompt bytes, and 512 float32 little-endian.
void write_embedding_file(const std::string& path,
                          const std::vector<std::pair<std::string, torch::Tensor>>& entries);
std::vector<std::pair<std::string, torch::Tensor>> read_embedding_file(const std::string& path);

}  // namespace fex4d
