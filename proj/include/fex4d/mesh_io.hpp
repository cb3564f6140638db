#pragma once

#include <torch/torch.h>

#include <array>
#include <string>
#include <vector>

namespace fex4d {

struct Mesh {
  torch::Tensor vertices;  // [V, 3] float32
  std::vector<std::array<int64_t, 3>> triangles;
};

Mesh read_obj(const std::string& path);
void write_obj(const std::string& path, const Mesh& mesh);

// Binary little-endian PLY with float vertices and int vertex_indices.
Mesh read_ply(const std::string& path);
void write_ply(const std::string& path, const Mesh& mesh);

// Landmark correspondence: plain text, one template vertex index per line.
std::vector<int64_t> read_landmark_indices(const std::string& path);
void write_landmark_indices(const std::string& path, const std::vector<int64_t>& indices);

}  // namespace fex4d
