#include "fex4d/mesh_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace fex4d {

Mesh read_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_obj: cannot open " + path);
  std::vector<float> verts;
  Mesh mesh;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      float x, y, z;
      ls >> x >> y >> z;
      verts.insert(verts.end(), {x, y, z});
    } else if (tag == "f") {
      std::array<int64_t, 3> tri{};
      for (int i = 0; i < 3; ++i) {
        std::string tok;
        ls >> tok;
        tri[i] = std::stoll(tok.substr(0, tok.find('/'))) - 1;  // OBJ is 1-based
      }
      mesh.triangles.push_back(tri);
    }
  }
  const auto V = static_cast<int64_t>(verts.size() / 3);
  mesh.vertices = torch::from_blob(verts.data(), {V, 3}, torch::kFloat32).clone();
  return mesh;
}

void write_obj(const std::string& path, const Mesh& mesh) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_obj: cannot open " + path);
  auto v = mesh.vertices.to(torch::kFloat32).contiguous();
  const auto* p = v.data_ptr<float>();
  os.precision(8);
  for (int64_t i = 0; i < v.size(0); ++i)
    os << "v " << p[3 * i] << " " << p[3 * i + 1] << " " << p[3 * i + 2] << "\n";
  for (const auto& tri : mesh.triangles)
    os << "f " << tri[0] + 1 << " " << tri[1] + 1 << " " << tri[2] + 1 << "\n";
  if (!os) throw std::runtime_error("write_obj: write failed for " + path);
}

void write_ply(const std::string& path, const Mesh& mesh) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ply: cannot open " + path);
  auto v = mesh.vertices.to(torch::kFloat32).contiguous();
  os << "ply\nformat binary_little_endian 1.0\n"
     << "element vertex " << v.size(0) << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "element face " << mesh.triangles.size() << "\n"
     << "property list uchar int vertex_indices\nend_header\n";
  os.write(reinterpret_cast<const char*>(v.data_ptr<float>()),
           static_cast<std::streamsize>(v.numel() * sizeof(float)));
  for (const auto& tri : mesh.triangles) {
    const unsigned char n = 3;
    os.write(reinterpret_cast<const char*>(&n), 1);
    for (int i = 0; i < 3; ++i) {
      const auto idx = static_cast<int32_t>(tri[i]);
      os.write(reinterpret_cast<const char*>(&idx), 4);
    }
  }
  if (!os) throw std::runtime_error("write_ply: write failed for " + path);
}

Mesh read_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ply: cannot open " + path);
  std::string line;
  int64_t n_verts = -1, n_faces = -1;
  std::getline(is, line);
  if (line != "ply") throw std::runtime_error("read_ply: not a PLY file: " + path);
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian")
        throw std::runtime_error("read_ply: only binary little-endian PLY is supported");
    } else if (tag == "element") {
      std::string what;
      int64_t count;
      ls >> what >> count;
      if (what == "vertex") n_verts = count;
      if (what == "face") n_faces = count;
    } else if (tag == "end_header") {
      break;
    }
  }
  if (n_verts < 0 || n_faces < 0) throw std::runtime_error("read_ply: malformed header");
  Mesh mesh;
  mesh.vertices = torch::empty({n_verts, 3}, torch::kFloat32);
  is.read(reinterpret_cast<char*>(mesh.vertices.data_ptr<float>()),
          static_cast<std::streamsize>(n_verts * 3 * sizeof(float)));
  for (int64_t f = 0; f < n_faces; ++f) {
    unsigned char n;
    is.read(reinterpret_cast<char*>(&n), 1);
    if (n != 3) throw std::runtime_error("read_ply: non-triangular face");
    std::array<int64_t, 3> tri{};
    for (int i = 0; i < 3; ++i) {
      int32_t idx;
      is.read(reinterpret_cast<char*>(&idx), 4);
      tri[i] = idx;
    }
    mesh.triangles.push_back(tri);
  }
  if (!is) throw std::runtime_error("read_ply: truncated file " + path);
  return mesh;
}

std::vector<int64_t> read_landmark_indices(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_landmark_indices: cannot open " + path);
  std::vector<int64_t> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(std::stoll(line));
  }
  return out;
}

void write_landmark_indices(const std::string& path, const std::vector<int64_t>& indices) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_landmark_indices: cannot open " + path);
  for (auto i : indices) os << i << "\n";
}

}  // namespace fex4d
