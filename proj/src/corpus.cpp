#include "fex4d/corpus.hpp"

#include <iomanip>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace fex4d {

namespace {

// Deterministic gaussian stream; std::normal_distribution is implementation
// defined, so Box-Muller keeps corpora bit-identical across toolchains.
class GaussStream {
 public:
  explicit GaussStream(uint64_t seed) : rng_(seed) {}

  double normal() {
    if (have_) {
      have_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_ = true;
    return r * std::cos(a);
  }

  double uniform() {  // in [0,1)
    return (rng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform() * (hi - lo + 1));
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_ = false;
};

torch::Tensor gauss_tensor(GaussStream& g, std::vector<int64_t> shape) {
  auto t = torch::empty(shape, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<float>(g.normal());
  return t;
}

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

// Onset-apex-offset envelope for the class-specific action: zero outside the
// middle of the clip so partial sequences cut from either end stay ambiguous
// about the class until the apex comes into view.
double apex_bump(double u) {
  if (u <= 0.2 || u >= 0.8) return 0.0;
  const double s = std::sin(M_PI * (u - 0.2) / 0.6);
  return s * s;
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

SequenceRecord resample_sequence(const SequenceRecord& rec, int target_F) {
  const int64_t F = rec.frames();
  if (F < 2 || target_F < 2)
    throw std::invalid_argument("resample_sequence: need at least 2 frames on both sides");
  SequenceRecord out = rec;
  if (target_F == F) {
    out.landmarks = rec.landmarks.clone();
    return out;
  }
  auto src = rec.landmarks;
  auto dst = torch::empty({target_F, src.size(1), src.size(2)}, src.options());
  for (int i = 0; i < target_F; ++i) {
    const double pos = static_cast<double>(i) * (F - 1) / (target_F - 1);
    const auto lo = static_cast<int64_t>(std::floor(pos));
    const auto hi = std::min<int64_t>(lo + 1, F - 1);
    const double w = pos - lo;
    if (w == 0.0) {
      dst[i] = src[lo];
    } else {
      dst[i] = (1.0 - w) * src[lo] + w * src[hi];
    }
  }
  out.landmarks = dst;
  return out;
}

torch::Tensor extract_neutral(const SequenceRecord& rec) {
  if (rec.frames() < 1) throw std::invalid_argument("extract_neutral: empty record");
  return rec.type == SeqType::N2E ? rec.landmarks[0] : rec.landmarks[rec.frames() - 1];
}

Corpus make_synthetic_corpus(int n_sequences, int n_classes, uint64_t seed,
                             const SyntheticOptions& opts) {
  if (n_classes < 2) throw std::invalid_argument("make_synthetic_corpus: need n_classes >= 2");
  const int N = opts.n_landmarks;

  // Fixed template geometry, shared across corpora with the same seed.
  GaussStream tmpl_rng(seed * 6364136223846793005ull + 1);
  auto base = gauss_tensor(tmpl_rng, {N, 3}) * 40.0;  // ~ face-scale mm spread

  std::vector<torch::Tensor> subject_offset;
  GaussStream subj_rng(seed * 6364136223846793005ull + 2);
  for (int s = 0; s < opts.n_subjects; ++s)
    subject_offset.push_back(gauss_tensor(subj_rng, {N, 3}) * 3.0);

  // Class-shared progression field (the slow neutral-to-expressive drift that
  // orients a clip in time) plus per-class action fields, all unit directions
  // scaled to a common amplitude. The action is animated by an onset-apex-
  // offset bump, so class identity lives in the middle of the clip rather than
  // in its endpoints.
  GaussStream cls_rng(seed * 6364136223846793005ull + 3);
  const double amp = opts.class_amplitude * std::sqrt(static_cast<double>(N));
  auto ramp_basis = gauss_tensor(cls_rng, {N, 3});
  ramp_basis = ramp_basis / ramp_basis.norm() * amp;
  std::vector<torch::Tensor> class_basis;
  for (int c = 0; c < n_classes; ++c) {
    auto d = gauss_tensor(cls_rng, {N, 3});
    d = d / d.norm();
    class_basis.push_back(d * amp);
  }

  Corpus corpus;
  corpus.n_classes = n_classes;
  GaussStream rng(seed);
  for (int i = 0; i < n_sequences; ++i) {
    SequenceRecord rec;
    rec.label = i % n_classes;
    rec.type = (i / n_classes) % 2 == 0 ? SeqType::N2E : SeqType::E2N;
    rec.subject = (i / (2 * n_classes)) % opts.n_subjects;
    rec.source = "synthetic";
    const int F = rng.uniform_int(opts.min_frames, opts.max_frames);

    auto neutral = base + subject_offset[rec.subject];
    auto frames = torch::empty({F, N, 3}, torch::kFloat32);
    for (int f = 0; f < F; ++f) {
      double u = static_cast<double>(f) / (F - 1);
      if (rec.type == SeqType::E2N) u = 1.0 - u;
      frames[f] = neutral + smoothstep(u) * ramp_basis +
                  apex_bump(u) * class_basis[rec.label] +
                  opts.jitter * gauss_tensor(rng, {N, 3});
    }
    rec.landmarks = frames;
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

CorpusStats compute_stats(const Corpus& corpus) {
  if (corpus.records.empty()) throw std::invalid_argument("compute_stats: empty corpus");
  const auto N = corpus.records.front().n_landmarks();
  auto sum = torch::zeros({N, 3}, torch::kFloat64);
  auto sumsq = torch::zeros({N, 3}, torch::kFloat64);
  int64_t count = 0;
  for (const auto& rec : corpus.records) {
    auto x = rec.landmarks.to(torch::kFloat64);
    sum += x.sum(0);
    sumsq += (x * x).sum(0);
    count += rec.frames();
  }
  auto mean = sum / count;
  auto var = (sumsq / count - mean * mean).clamp_min(0.0);
  CorpusStats stats;
  stats.mean = mean.to(torch::kFloat32);
  stats.std = var.sqrt().clamp_min(1e-6).to(torch::kFloat32);
  return stats;
}

torch::Tensor normalize(const torch::Tensor& landmarks, const CorpusStats& stats) {
  return (landmarks - stats.mean) / stats.std;
}

torch::Tensor denormalize(const torch::Tensor& landmarks, const CorpusStats& stats) {
  return landmarks * stats.std + stats.mean;
}

void write_sequence(const std::string& path, const SequenceRecord& rec) {
  auto x = rec.landmarks.to(torch::kFloat32).contiguous();
  if (x.dim() != 3 || x.size(2) != 3)
    throw std::invalid_argument("write_sequence: landmarks must be [F,N,3]");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("write_sequence: cannot open " + tmp);
    os.write("4DFM", 4);
    write_u32(os, 1);  // version
    write_u32(os, static_cast<uint32_t>(x.size(0)));
    write_u32(os, static_cast<uint32_t>(x.size(1)));
    write_u32(os, static_cast<uint32_t>(rec.label));
    const char type = static_cast<char>(rec.type);
    os.write(&type, 1);
    os.write(reinterpret_cast<const char*>(x.data_ptr<float>()),
             static_cast<std::streamsize>(x.numel() * sizeof(float)));
    if (!os) throw std::runtime_error("write_sequence: write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

SequenceRecord read_sequence(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_sequence: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "4DFM", 4) != 0)
    throw std::runtime_error("read_sequence: bad magic in " + path);
  const uint32_t version = read_u32(is);
  if (version != 1)
    throw std::runtime_error("read_sequence: unsupported version " + std::to_string(version));
  const uint32_t F = read_u32(is);
  const uint32_t N = read_u32(is);
  const uint32_t label = read_u32(is);
  char type;
  is.read(&type, 1);
  if (type != 0 && type != 1) throw std::runtime_error("read_sequence: bad sequence type");
  SequenceRecord rec;
  rec.label = static_cast<int>(label);
  rec.type = static_cast<SeqType>(type);
  rec.source = path;
  rec.landmarks = torch::empty({F, N, 3}, torch::kFloat32);
  is.read(reinterpret_cast<char*>(rec.landmarks.data_ptr<float>()),
          static_cast<std::streamsize>(rec.landmarks.numel() * sizeof(float)));
  if (!is) throw std::runtime_error("read_sequence: truncated file " + path);
  return rec;
}

void write_corpus(const std::string& dir, const Corpus& corpus) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "n_classes=" << corpus.n_classes << "\n";
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    std::ostringstream name;
    name << "seq_" << std::setw(5) << std::setfill('0') << i << ".4dfm";
    write_sequence((fs::path(dir) / name.str()).string(), corpus.records[i]);
    manifest << name.str() << "\n";
  }
  const fs::path mpath = fs::path(dir) / "manifest.txt";
  const fs::path tmp = mpath.string() + ".tmp";
  std::ofstream os(tmp);
  os << manifest.str();
  os.close();
  fs::rename(tmp, mpath);
}

Corpus read_corpus(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.txt");
  if (!is) throw std::runtime_error("read_corpus: missing manifest in " + dir);
  Corpus corpus;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("n_classes=", 0) == 0) {
      corpus.n_classes = std::stoi(line.substr(10));
      continue;
    }
    corpus.records.push_back(read_sequence((fs::path(dir) / line).string()));
  }
  return corpus;
}

}  // namespace fex4d
