#include "fex4d/text_embed.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace fex4d {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

torch::Tensor StubTextEmbedding::embed(const std::string& prompt) {
  if (prompt.empty()) throw std::invalid_argument("text embedding: empty prompt");
  std::mt19937_64 rng(fnv1a(prompt));
  auto v = torch::empty({kTextEmbedDim}, torch::kFloat32);
  auto* p = v.data_ptr<float>();
  auto uniform = [&rng]() { return (rng() >> 11) * (1.0 / 9007199254740992.0); };
  for (int i = 0; i < kTextEmbedDim; i += 2) {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    p[i] = static_cast<float>(r * std::cos(2.0 * M_PI * u2));
    p[i + 1] = static_cast<float>(r * std::sin(2.0 * M_PI * u2));
  }
  return v / v.norm();
}

FileTextEmbedding::FileTextEmbedding(const std::string& path)
    : entries_(read_embedding_file(path)) {}

torch::Tensor FileTextEmbedding::embed(const std::string& prompt) {
  if (prompt.empty()) throw std::invalid_argument("text embedding: empty prompt");
  for (const auto& [key, v] : entries_)
    if (key == prompt) return v;
  throw std::runtime_error("text embedding provider: no embedding for prompt '" + prompt + "'");
}

void write_embedding_file(const std::string& path,
                          const std::vector<std::pair<std::string, torch::Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_embedding_file: cannot open " + path);
  os.write("4DTE", 4);
  write_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& [prompt, v] : entries) {
    if (v.numel() != kTextEmbedDim)
      throw std::invalid_argument("write_embedding_file: embedding must have 512 values");
    auto vf = v.to(torch::kFloat32).contiguous();
    write_u32(os, static_cast<uint32_t>(prompt.size()));
    os.write(prompt.data(), static_cast<std::streamsize>(prompt.size()));
    os.write(reinterpret_cast<const char*>(vf.data_ptr<float>()),
             kTextEmbedDim * sizeof(float));
  }
  if (!os) throw std::runtime_error("write_embedding_file: write failed for " + path);
}

std::vector<std::pair<std::string, torch::Tensor>> read_embedding_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_embedding_file: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "4DTE", 4) != 0)
    throw std::runtime_error("read_embedding_file: bad magic in " + path);
  const uint32_t count = read_u32(is);
  std::vector<std::pair<std::string, torch::Tensor>> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = read_u32(is);
    std::string prompt(len, '\0');
    is.read(prompt.data(), len);
    auto v = torch::empty({kTextEmbedDim}, torch::kFloat32);
    is.read(reinterpret_cast<char*>(v.data_ptr<float>()), kTextEmbedDim * sizeof(float));
    if (!is) throw std::runtime_error("read_embedding_file: truncated file " + path);
    entries.emplace_back(std::move(prompt), std::move(v));
  }
  return entries;
}

}  // namespace fex4d
