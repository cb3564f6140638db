#include "fex4d/checkpoint.hpp"

#include <torch/serialize.h>

namespace fex4d {

namespace {

constexpr int64_t kFormatVersion = 1;

void write_scalar(torch::serialize::OutputArchive& ar, const std::string& key, double v) {
  ar.write(key, torch::tensor(v, torch::kFloat64));
}

void write_scalar(torch::serialize::OutputArchive& ar, const std::string& key, int64_t v) {
  ar.write(key, torch::tensor(v, torch::kInt64));
}

double read_double(torch::serialize::InputArchive& ar, const std::string& key) {
  torch::Tensor t;
  ar.read(key, t);
  return t.item<double>();
}

int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key) {
  torch::Tensor t;
  ar.read(key, t);
  return t.item<int64_t>();
}

void write_header(torch::serialize::OutputArchive& ar, const std::string& kind) {
  write_scalar(ar, "format_version", kFormatVersion);
  ar.write("kind", kind);
}

void check_header(torch::serialize::InputArchive& ar, const std::string& kind,
                  const std::string& path) {
  const int64_t version = read_int(ar, "format_version");
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  c10::IValue k;
  ar.read("kind", k);
  if (k.toStringRef() != kind)
    throw std::runtime_error("checkpoint: " + path + " holds a '" + k.toStringRef() +
                             "' model, expected '" + kind + "'");
}

void write_schedule(torch::serialize::OutputArchive& ar, const ScheduleParams& s) {
  write_scalar(ar, "schedule_T", static_cast<int64_t>(s.T));
  write_scalar(ar, "beta_start", s.beta_start);
  write_scalar(ar, "beta_end", s.beta_end);
}

ScheduleParams read_schedule(torch::serialize::InputArchive& ar) {
  ScheduleParams s;
  s.T = static_cast<int>(read_int(ar, "schedule_T"));
  s.beta_start = read_double(ar, "beta_start");
  s.beta_end = read_double(ar, "beta_end");
  return s;
}

void write_stats(torch::serialize::OutputArchive& ar, const CorpusStats& stats) {
  ar.write("stats_mean", stats.mean);
  ar.write("stats_std", stats.std);
}

CorpusStats read_stats(torch::serialize::InputArchive& ar) {
  CorpusStats stats;
  ar.read("stats_mean", stats.mean);
  ar.read("stats_std", stats.std);
  return stats;
}

template <typename Module>
void write_model(torch::serialize::OutputArchive& ar, Module& model) {
  torch::serialize::OutputArchive m;
  model->save(m);
  ar.write("model", m);
}

template <typename Module>
void read_model(torch::serialize::InputArchive& ar, Module& model) {
  torch::serialize::InputArchive m;
  ar.read("model", m);
  model->load(m);
}

}  // namespace

void save_denoiser(const std::string& path, SequenceDenoiser& model,
                   const ScheduleParams& schedule, const CorpusStats& stats) {
  torch::serialize::OutputArchive ar;
  write_header(ar, "denoiser");
  const auto& cfg = model->config();
  write_scalar(ar, "layers", static_cast<int64_t>(cfg.layers));
  write_scalar(ar, "heads", static_cast<int64_t>(cfg.heads));
  write_scalar(ar, "model_dim", static_cast<int64_t>(cfg.model_dim));
  write_scalar(ar, "feedforward_dim", static_cast<int64_t>(cfg.feedforward_dim));
  write_scalar(ar, "dropout", cfg.dropout);
  write_scalar(ar, "max_len", static_cast<int64_t>(cfg.max_len));
  write_scalar(ar, "n_landmarks", static_cast<int64_t>(cfg.n_landmarks));
  write_schedule(ar, schedule);
  write_stats(ar, stats);
  write_model(ar, model);
  ar.save_to(path);
}

DenoiserCheckpoint load_denoiser(const std::string& path) {
  torch::serialize::InputArchive ar;
  ar.load_from(path);
  check_header(ar, "denoiser", path);
  DenoiserConfig cfg;
  cfg.layers = static_cast<int>(read_int(ar, "layers"));
  cfg.heads = static_cast<int>(read_int(ar, "heads"));
  cfg.model_dim = static_cast<int>(read_int(ar, "model_dim"));
  cfg.feedforward_dim = static_cast<int>(read_int(ar, "feedforward_dim"));
  cfg.dropout = read_double(ar, "dropout");
  cfg.max_len = static_cast<int>(read_int(ar, "max_len"));
  cfg.n_landmarks = static_cast<int>(read_int(ar, "n_landmarks"));
  DenoiserCheckpoint ckpt;
  ckpt.model = SequenceDenoiser(cfg);
  ckpt.schedule = read_schedule(ar);
  ckpt.stats = read_stats(ar);
  read_model(ar, ckpt.model);
  return ckpt;
}

void save_guidance(const std::string& path, GuidanceBiT& model, const ScheduleParams& schedule,
                   const CorpusStats& stats) {
  torch::serialize::OutputArchive ar;
  write_header(ar, "guidance");
  const auto& cfg = model->config();
  write_scalar(ar, "layers", static_cast<int64_t>(cfg.layers));
  write_scalar(ar, "heads", static_cast<int64_t>(cfg.heads));
  write_scalar(ar, "model_dim", static_cast<int64_t>(cfg.model_dim));
  write_scalar(ar, "feedforward_dim", static_cast<int64_t>(cfg.feedforward_dim));
  write_scalar(ar, "dropout", cfg.dropout);
  write_scalar(ar, "max_len", static_cast<int64_t>(cfg.max_len));
  write_scalar(ar, "n_landmarks", static_cast<int64_t>(cfg.n_landmarks));
  write_scalar(ar, "out_dim", static_cast<int64_t>(cfg.out_dim));
  write_scalar(ar, "order_sensitive", static_cast<int64_t>(cfg.order_sensitive ? 1 : 0));
  write_schedule(ar, schedule);
  write_stats(ar, stats);
  write_model(ar, model);
  ar.save_to(path);
}

GuidanceCheckpoint load_guidance(const std::string& path) {
  torch::serialize::InputArchive ar;
  ar.load_from(path);
  check_header(ar, "guidance", path);
  GuidanceNetConfig cfg;
  cfg.layers = static_cast<int>(read_int(ar, "layers"));
  cfg.heads = static_cast<int>(read_int(ar, "heads"));
  cfg.model_dim = static_cast<int>(read_int(ar, "model_dim"));
  cfg.feedforward_dim = static_cast<int>(read_int(ar, "feedforward_dim"));
  cfg.dropout = read_double(ar, "dropout");
  cfg.max_len = static_cast<int>(read_int(ar, "max_len"));
  cfg.n_landmarks = static_cast<int>(read_int(ar, "n_landmarks"));
  cfg.out_dim = static_cast<int>(read_int(ar, "out_dim"));
  cfg.order_sensitive = read_int(ar, "order_sensitive") != 0;
  GuidanceCheckpoint ckpt;
  ckpt.model = GuidanceBiT(cfg);
  ckpt.schedule = read_schedule(ar);
  ckpt.stats = read_stats(ar);
  read_model(ar, ckpt.model);
  return ckpt;
}

void save_ic(const std::string& path, IndependentClassifier& model, const CorpusStats& stats,
             bool order_sensitive) {
  torch::serialize::OutputArchive ar;
  write_header(ar, "ic");
  const auto& cfg = model->config();
  write_scalar(ar, "input_dim", static_cast<int64_t>(cfg.input_dim));
  write_scalar(ar, "hidden", static_cast<int64_t>(cfg.hidden));
  write_scalar(ar, "classes", static_cast<int64_t>(cfg.classes));
  write_scalar(ar, "order_sensitive", static_cast<int64_t>(order_sensitive ? 1 : 0));
  write_stats(ar, stats);
  write_model(ar, model);
  ar.save_to(path);
}

ICCheckpoint load_ic(const std::string& path) {
  torch::serialize::InputArchive ar;
  ar.load_from(path);
  check_header(ar, "ic", path);
  ICConfig cfg;
  cfg.input_dim = static_cast<int>(read_int(ar, "input_dim"));
  cfg.hidden = static_cast<int>(read_int(ar, "hidden"));
  cfg.classes = static_cast<int>(read_int(ar, "classes"));
  ICCheckpoint ckpt;
  ckpt.model = IndependentClassifier(cfg);
  ckpt.stats = read_stats(ar);
  ckpt.order_sensitive = read_int(ar, "order_sensitive") != 0;
  read_model(ar, ckpt.model);
  return ckpt;
}

void save_retarget(const std::string& path, RetargetNet& model, const MeshTopology& topology,
                   const std::vector<int64_t>& landmark_idx) {
  torch::serialize::OutputArchive ar;
  write_header(ar, "retarget");
  const auto& cfg = model->config();
  write_scalar(ar, "n_landmarks", static_cast<int64_t>(cfg.n_landmarks));
  write_scalar(ar, "feature_dim", static_cast<int64_t>(cfg.feature_dim));
  write_scalar(ar, "spiral_len", static_cast<int64_t>(cfg.spiral_len));
  write_scalar(ar, "use_attention", static_cast<int64_t>(cfg.use_attention ? 1 : 0));
  write_scalar(ar, "coord_scale", cfg.coord_scale);
  write_scalar(ar, "V", topology.V);
  auto tris = torch::empty({static_cast<int64_t>(topology.triangles.size()), 3}, torch::kInt64);
  for (size_t i = 0; i < topology.triangles.size(); ++i)
    for (int j = 0; j < 3; ++j) tris[i][j] = topology.triangles[i][j];
  ar.write("triangles", tris);
  ar.write("spirals", topology.spirals);
  ar.write("landmark_idx", torch::tensor(landmark_idx, torch::kInt64));
  write_model(ar, model);
  ar.save_to(path);
}

RetargetCheckpoint load_retarget(const std::string& path) {
  torch::serialize::InputArchive ar;
  ar.load_from(path);
  check_header(ar, "retarget", path);
  RetargetConfig cfg;
  cfg.n_landmarks = static_cast<int>(read_int(ar, "n_landmarks"));
  cfg.feature_dim = static_cast<int>(read_int(ar, "feature_dim"));
  cfg.spiral_len = static_cast<int>(read_int(ar, "spiral_len"));
  cfg.use_attention = read_int(ar, "use_attention") != 0;
  cfg.coord_scale = read_double(ar, "coord_scale");

  RetargetCheckpoint ckpt;
  ckpt.topology.V = read_int(ar, "V");
  ckpt.topology.k = cfg.spiral_len;
  torch::Tensor tris;
  ar.read("triangles", tris);
  for (int64_t i = 0; i < tris.size(0); ++i)
    ckpt.topology.triangles.push_back(
        {tris[i][0].item<int64_t>(), tris[i][1].item<int64_t>(), tris[i][2].item<int64_t>()});
  ar.read("spirals", ckpt.topology.spirals);
  torch::Tensor lm;
  ar.read("landmark_idx", lm);
  for (int64_t i = 0; i < lm.size(0); ++i) ckpt.landmark_idx.push_back(lm[i].item<int64_t>());
  ckpt.model = RetargetNet(ckpt.topology, cfg);
  read_model(ar, ckpt.model);
  return ckpt;
}

}  // namespace fex4d
