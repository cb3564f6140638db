// Command-line surface for the 4D facial-expression generation pipeline:
// corpus creation, training of every network, all sampling tasks, mesh
// retargeting, and evaluation. Every command is deterministic given --seed
// and writes a run manifest next to its outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fex4d/checkpoint.hpp"
#include "fex4d/config.hpp"
#include "fex4d/corpus.hpp"
#include "fex4d/denoiser.hpp"
#include "fex4d/eval.hpp"
#include "fex4d/guidance.hpp"
#include "fex4d/mesh_io.hpp"
#include "fex4d/retarget.hpp"
#include "fex4d/sampler.hpp"
#include "fex4d/text_embed.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "fex4d 0.1.0";

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  std::string out;
};

fex4d::RunConfig load_cfg(const CommonOpts& opts, bool desk) {
  if (!opts.config_path.empty()) return fex4d::load_config(opts.config_path);
  return desk ? fex4d::desk_profile() : fex4d::RunConfig{};
}

void write_manifest(const std::string& dir, const std::string& command,
                    const fex4d::RunConfig& cfg, uint64_t seed) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config_hash"] = cfg.hash();
  m["version"] = kVersion;
  const fs::path base = dir.empty() ? fs::path(".") : fs::path(dir);
  fs::create_directories(base);
  const auto path = base / (command + "_manifest.json");
  const auto tmp = path.string() + ".tmp";
  std::ofstream os(tmp);
  os << m.dump(2) << "\n";
  os.close();
  fs::rename(tmp, path);
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool need_out = true) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--seed", opts.seed, "RNG seed")->default_val(0);
  auto* out = cmd->add_option("--out", opts.out, "output path");
  if (need_out) out->required();
}

fex4d::TrainSettings settings_from(const fex4d::RunConfig& cfg, uint64_t seed, bool verbose) {
  fex4d::TrainSettings s;
  s.lr = cfg.lr;
  s.batch_size = cfg.batch_size;
  s.iters = cfg.train_iters;
  s.seed = seed;
  if (verbose)
    s.on_step = [](int step, double loss) {
      std::cout << "step " << step << " loss " << loss << "\n";
    };
  return s;
}

fex4d::ScheduleParams schedule_params(const fex4d::RunConfig& cfg) {
  return {cfg.schedule_T, cfg.beta_start, cfg.beta_end};
}

void write_samples(const std::string& dir, const torch::Tensor& batch_mm, int label,
                   fex4d::SeqType type, int n_landmarks) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "n_classes=" << label + 1 << "\n";
  for (int64_t b = 0; b < batch_mm.size(0); ++b) {
    fex4d::SequenceRecord rec;
    rec.landmarks = batch_mm[b].reshape({batch_mm.size(1), n_landmarks, 3}).contiguous();
    rec.label = label;
    rec.type = type;
    std::ostringstream name;
    name << "sample_" << std::setw(4) << std::setfill('0') << b << ".4dfm";
    fex4d::write_sequence((fs::path(dir) / name.str()).string(), rec);
    manifest << name.str() << "\n";
  }
  std::ofstream os(fs::path(dir) / "manifest.txt");
  os << manifest.str();
}

int run(int argc, char** argv) {
  CLI::App app{"4D facial expression diffusion pipeline"};
  app.require_subcommand(1);

  // ---- make-synthetic ----
  CommonOpts synth_opts;
  int synth_n = 256, synth_classes = 2;
  auto* synth = app.add_subcommand("make-synthetic", "generate the synthetic landmark corpus");
  add_common(synth, synth_opts);
  synth->add_option("--sequences", synth_n, "number of sequences")->default_val(256);
  synth->add_option("--classes", synth_classes, "number of classes")->default_val(2);

  // ---- train-diffusion ----
  CommonOpts diff_opts;
  std::string diff_corpus;
  bool diff_desk = false, diff_verbose = false;
  auto* traind = app.add_subcommand("train-diffusion", "train the denoiser");
  add_common(traind, diff_opts);
  traind->add_option("--corpus", diff_corpus)->required();
  traind->add_flag("--desk", diff_desk, "use the desk-scale profile");
  traind->add_flag("--verbose", diff_verbose);

  // ---- train-classifier ----
  CommonOpts clf_opts;
  std::string clf_corpus;
  bool clf_desk = false, clf_type_s = false, clf_verbose = false;
  auto* trainc = app.add_subcommand("train-classifier", "train the guidance classifier");
  add_common(trainc, clf_opts);
  trainc->add_option("--corpus", clf_corpus)->required();
  trainc->add_flag("--desk", clf_desk);
  trainc->add_flag("--type-s", clf_type_s, "order-sensitive (expression x {N2E,E2N})");
  trainc->add_flag("--verbose", clf_verbose);

  // ---- train-text-head ----
  CommonOpts txt_opts;
  std::string txt_corpus, txt_embeddings;
  bool txt_desk = false, txt_verbose = false;
  auto* traint = app.add_subcommand("train-text-head", "train the text-alignment head");
  add_common(traint, txt_opts);
  traint->add_option("--corpus", txt_corpus)->required();
  traint->add_option("--embeddings", txt_embeddings, "embedding exchange file (default: stub)");
  traint->add_flag("--desk", txt_desk);
  traint->add_flag("--verbose", txt_verbose);

  // ---- train-retarget ----
  CommonOpts rt_opts;
  bool rt_desk = false, rt_no_attention = false, rt_verbose = false;
  auto* trainr = app.add_subcommand("train-retarget",
                                    "train the mesh retargeter on the synthetic mesh corpus");
  std::string rt_export_mesh;
  add_common(trainr, rt_opts);
  trainr->add_option("--export-mesh", rt_export_mesh,
                     "also write the template mesh (.obj) and <path>.landmarks");
  trainr->add_flag("--desk", rt_desk);
  trainr->add_flag("--no-attention", rt_no_attention, "ablation without cross-attention");
  trainr->add_flag("--verbose", rt_verbose);

  // ---- train-ic ----
  CommonOpts ic_opts;
  std::string ic_corpus;
  bool ic_desk = false, ic_type_s = false;
  auto* trainic = app.add_subcommand("train-ic", "train the independent evaluation classifier");
  add_common(trainic, ic_opts);
  trainic->add_option("--corpus", ic_corpus)->required();
  trainic->add_flag("--desk", ic_desk);
  trainic->add_flag("--type-s", ic_type_s);

  // ---- sample ----
  CommonOpts sample_opts;
  std::string sm_ckpt, sm_classifier, sm_text_head, sm_embeddings, sm_fill, sm_geometry,
      sm_protocol = "FFM", sm_text, sm_end = "auto";
  int sm_label = -1, sm_length = 40, sm_count = 1;
  double sm_lambda = -1, sm_opt_lr = -1;
  int sm_opt_steps = -1, sm_harm_iters = -1;
  bool sm_desk = false;
  auto* sample = app.add_subcommand("sample", "sample landmark sequences");
  add_common(sample, sample_opts);
  sample->add_option("--checkpoint", sm_ckpt, "denoiser checkpoint")->required();
  sample->add_option("--length", sm_length)->default_val(40);
  sample->add_option("--count", sm_count)->default_val(1);
  sample->add_option("--label", sm_label, "class label for guided sampling");
  sample->add_option("--classifier", sm_classifier, "guidance classifier checkpoint");
  sample->add_option("--text", sm_text, "text prompt for guided sampling");
  sample->add_option("--text-head", sm_text_head, "text-alignment head checkpoint");
  sample->add_option("--embeddings", sm_embeddings, "embedding exchange file (default: stub)");
  sample->add_option("--fill", sm_fill, "sequence file to fill");
  sample->add_option("--protocol", sm_protocol, "FFB|FFE|FFM")->default_val("FFM");
  sample->add_option("--geometry", sm_geometry, "sequence file supplying the neutral frame");
  sample->add_option("--end", sm_end, "enforced frame position: first|last|auto");
  sample->add_option("--lambda", sm_lambda);
  sample->add_option("--opt-lr", sm_opt_lr);
  sample->add_option("--opt-steps", sm_opt_steps);
  sample->add_option("--iters", sm_harm_iters, "harmonization iterations");
  sample->add_flag("--desk", sm_desk);

  // ---- retarget ----
  CommonOpts ret_opts;
  std::string ret_ckpt, ret_mesh, ret_seq;
  auto* retarget = app.add_subcommand("retarget", "retarget a landmark sequence onto a mesh");
  add_common(retarget, ret_opts);
  retarget->add_option("--checkpoint", ret_ckpt)->required();
  retarget->add_option("--mesh", ret_mesh, "neutral mesh (.obj or .ply)")->required();
  retarget->add_option("--sequence", ret_seq, "landmark sequence file")->required();

  // ---- evaluate ----
  CommonOpts ev_opts;
  std::string ev_ic, ev_generated, ev_reference;
  auto* evaluate = app.add_subcommand("evaluate", "accuracy + FID of generated sequences");
  add_common(evaluate, ev_opts);
  evaluate->add_option("--ic", ev_ic, "independent classifier checkpoint")->required();
  evaluate->add_option("--generated", ev_generated)->required();
  evaluate->add_option("--reference", ev_reference)->required();

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    auto cfg = load_cfg(synth_opts, true);
    auto corpus = fex4d::make_synthetic_corpus(synth_n, synth_classes, synth_opts.seed);
    fex4d::write_corpus(synth_opts.out, corpus);
    write_manifest(synth_opts.out, "make-synthetic", cfg, synth_opts.seed);
    std::cout << "wrote " << corpus.records.size() << " sequences to " << synth_opts.out << "\n";
    return 0;
  }

  if (*traind) {
    auto cfg = load_cfg(diff_opts, diff_desk);
    auto corpus = fex4d::read_corpus(diff_corpus);
    auto stats = fex4d::compute_stats(corpus);
    fex4d::DenoiserConfig dc{cfg.denoiser_layers, cfg.denoiser_heads, cfg.denoiser_dim,
                             cfg.denoiser_ff_dim, cfg.denoiser_dropout, cfg.max_len,
                             cfg.n_landmarks};
    fex4d::SequenceDenoiser model(dc);
    auto sched = fex4d::make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
    auto result = fex4d::train_denoiser(model, fex4d::flatten_corpus(corpus, stats), sched,
                                        settings_from(cfg, diff_opts.seed, diff_verbose));
    fex4d::save_denoiser(diff_opts.out, model, schedule_params(cfg), stats);
    write_manifest(fs::path(diff_opts.out).parent_path().string(), "train-diffusion", cfg,
                   diff_opts.seed);
    std::cout << "final loss " << result.loss_trace.back() << "\n";
    return 0;
  }

  if (*trainc) {
    auto cfg = load_cfg(clf_opts, clf_desk);
    auto corpus = fex4d::read_corpus(clf_corpus);
    auto stats = fex4d::compute_stats(corpus);
    auto data = fex4d::label_corpus(corpus, stats, clf_type_s);
    const int K = clf_type_s ? fex4d::type_s_class_count(corpus.n_classes) : corpus.n_classes;
    fex4d::GuidanceNetConfig gc{cfg.guidance_layers, cfg.guidance_heads, cfg.guidance_dim,
                                cfg.guidance_ff_dim, 0.0, cfg.max_len, cfg.n_landmarks,
                                K, clf_type_s};
    fex4d::GuidanceBiT model(gc);
    auto sched = fex4d::make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
    auto result = fex4d::train_guidance_classifier(
        model, data, sched, settings_from(cfg, clf_opts.seed, clf_verbose));
    fex4d::save_guidance(clf_opts.out, model, schedule_params(cfg), stats);
    write_manifest(fs::path(clf_opts.out).parent_path().string(), "train-classifier", cfg,
                   clf_opts.seed);
    std::cout << "final loss " << result.loss_trace.back() << "\n";
    return 0;
  }

  if (*traint) {
    auto cfg = load_cfg(txt_opts, txt_desk);
    auto corpus = fex4d::read_corpus(txt_corpus);
    auto stats = fex4d::compute_stats(corpus);
    std::unique_ptr<fex4d::TextEmbeddingProvider> provider;
    if (txt_embeddings.empty())
      provider = std::make_unique<fex4d::StubTextEmbedding>();
    else
      provider = std::make_unique<fex4d::FileTextEmbedding>(txt_embeddings);
    std::vector<torch::Tensor> sequences, targets;
    for (const auto& rec : corpus.records) {
      sequences.push_back(
          fex4d::normalize(rec.landmarks, stats).reshape({rec.frames(), -1}).contiguous());
      targets.push_back(provider->embed("expression " + std::to_string(rec.label)));
    }
    fex4d::GuidanceNetConfig gc{cfg.guidance_layers, cfg.guidance_heads, cfg.guidance_dim,
                                cfg.guidance_ff_dim, 0.0, cfg.max_len, cfg.n_landmarks,
                                fex4d::kTextEmbedDim, false};
    fex4d::GuidanceBiT model(gc);
    auto sched = fex4d::make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
    auto result = fex4d::train_text_head(model, sequences, targets, sched,
                                         settings_from(cfg, txt_opts.seed, txt_verbose));
    fex4d::save_guidance(txt_opts.out, model, schedule_params(cfg), stats);
    write_manifest(fs::path(txt_opts.out).parent_path().string(), "train-text-head", cfg,
                   txt_opts.seed);
    std::cout << "final loss " << result.loss_trace.back() << "\n";
    return 0;
  }

  if (*trainr) {
    auto cfg = load_cfg(rt_opts, rt_desk);
    auto mesh_corpus = fex4d::make_synthetic_mesh_corpus(rt_opts.seed);
    auto topo = fex4d::build_spirals(mesh_corpus.base.vertices.size(0),
                                     mesh_corpus.base.triangles, cfg.spiral_len);
    fex4d::RetargetConfig rc;
    rc.n_landmarks = cfg.n_landmarks;
    rc.feature_dim = cfg.retarget_dim;
    rc.spiral_len = cfg.spiral_len;
    rc.use_attention = !rt_no_attention;
    fex4d::RetargetNet model(topo, rc);
    auto settings = settings_from(cfg, rt_opts.seed, rt_verbose);
    auto result = fex4d::train_retarget(model, mesh_corpus.train, mesh_corpus.landmark_idx,
                                        cfg.retarget_landmark_weight, settings);
    fex4d::save_retarget(rt_opts.out, model, topo, mesh_corpus.landmark_idx);
    if (!rt_export_mesh.empty()) {
      fex4d::write_obj(rt_export_mesh, mesh_corpus.base);
      fex4d::write_landmark_indices(rt_export_mesh + ".landmarks", mesh_corpus.landmark_idx);
    }
    write_manifest(fs::path(rt_opts.out).parent_path().string(), "train-retarget", cfg,
                   rt_opts.seed);
    std::cout << "final loss " << result.loss_trace.back() << ", held-out error "
              << fex4d::retarget_error(model, mesh_corpus.held_out) << " mm\n";
    return 0;
  }

  if (*trainic) {
    auto cfg = load_cfg(ic_opts, ic_desk);
    auto corpus = fex4d::read_corpus(ic_corpus);
    auto stats = fex4d::compute_stats(corpus);
    auto data = fex4d::label_corpus(corpus, stats, ic_type_s);
    const int K = ic_type_s ? fex4d::type_s_class_count(corpus.n_classes) : corpus.n_classes;
    fex4d::IndependentClassifier model(
        fex4d::ICConfig{cfg.n_landmarks * 3, cfg.ic_hidden, K});
    fex4d::ICTrainSettings settings;
    settings.epochs = cfg.ic_epochs;
    settings.seed = ic_opts.seed;
    auto result = fex4d::train_ic(model, data, settings);
    fex4d::save_ic(ic_opts.out, model, stats, ic_type_s);
    write_manifest(fs::path(ic_opts.out).parent_path().string(), "train-ic", cfg, ic_opts.seed);
    std::cout << "validation accuracy " << result.held_out_accuracy << "\n";
    return 0;
  }

  if (*sample) {
    auto cfg = load_cfg(sample_opts, sm_desk);
    auto ckpt = fex4d::load_denoiser(sm_ckpt);
    auto sched = fex4d::make_schedule(ckpt.schedule.T, ckpt.schedule.beta_start,
                                      ckpt.schedule.beta_end);
    auto noise_fn = fex4d::make_denoiser_fn(ckpt.model);
    auto gen = at::detail::createCPUGenerator(sample_opts.seed);
    const int C = ckpt.model->config().frame_dim();
    const int N = ckpt.model->config().n_landmarks;

    fex4d::GuidanceConfig gcfg;
    gcfg.lambda = sm_lambda > 0 ? sm_lambda : cfg.lambda;
    gcfg.opt_lr = sm_opt_lr > 0 ? sm_opt_lr : cfg.opt_lr;
    gcfg.opt_steps = sm_opt_steps > 0 ? sm_opt_steps : cfg.opt_steps;
    gcfg.harmonization_iters = sm_harm_iters > 0 ? sm_harm_iters : cfg.harmonization_iters;

    torch::Tensor out_norm;  // [B, F, C] in normalized space
    int out_label = std::max(sm_label, 0);
    fex4d::SeqType out_type = fex4d::SeqType::N2E;

    if (!sm_fill.empty()) {
      auto rec = fex4d::read_sequence(sm_fill);
      auto clean = fex4d::normalize(rec.landmarks, ckpt.stats).reshape({rec.frames(), -1});
      fex4d::FrameMask mask;
      if (sm_protocol == "FFB") mask = fex4d::make_mask_ffb(clean, gen);
      else if (sm_protocol == "FFE") mask = fex4d::make_mask_ffe(clean, gen);
      else if (sm_protocol == "FFM") mask = fex4d::make_mask_ffm(clean, gen);
      else throw std::invalid_argument("sample: unknown protocol " + sm_protocol);
      out_norm = fex4d::sample_filling(sm_count, mask, sched, noise_fn, gen);
      out_label = rec.label;
      out_type = rec.type;
    } else if (!sm_geometry.empty()) {
      auto rec = fex4d::read_sequence(sm_geometry);
      auto neutral = fex4d::normalize(fex4d::extract_neutral(rec), ckpt.stats).reshape({1, -1});
      fex4d::GuideFn guide;
      bool enforce_first = true;
      if (sm_label >= 0) {
        if (sm_classifier.empty())
          throw std::invalid_argument("sample: --label requires --classifier");
        auto clf = fex4d::load_guidance(sm_classifier);
        guide = fex4d::make_label_guide(clf.model, sm_label);
        if (clf.model->config().order_sensitive) {  // label parity encodes N2E/E2N
          enforce_first = sm_label % 2 == 0;
          out_label = sm_label / 2;
        }
      }
      if (sm_end == "first") enforce_first = true;
      else if (sm_end == "last") enforce_first = false;
      else if (sm_end != "auto") throw std::invalid_argument("sample: bad --end value");
      fex4d::FrameMask mask;
      mask.F = sm_length;
      mask.known_idx = torch::tensor({enforce_first ? int64_t{0} : int64_t{sm_length - 1}},
                                     torch::kInt64);
      mask.known_frames = neutral;
      out_norm = fex4d::sample_geometry_adaptive(sm_count, mask, sched, noise_fn, guide, gcfg,
                                                 gen);
      out_type = enforce_first ? fex4d::SeqType::N2E : fex4d::SeqType::E2N;
    } else if (sm_label >= 0) {
      if (sm_classifier.empty())
        throw std::invalid_argument("sample: --label requires --classifier");
      auto clf = fex4d::load_guidance(sm_classifier);
      auto guide = fex4d::make_label_guide(clf.model, sm_label);
      out_norm = fex4d::sample_guided(sm_count, sm_length, C, sched, noise_fn, guide, gcfg, gen);
      if (clf.model->config().order_sensitive) {  // stored label is the expression id
        out_label = sm_label / 2;
        out_type = static_cast<fex4d::SeqType>(sm_label % 2);
      }
    } else if (!sm_text.empty()) {
      if (sm_text_head.empty())
        throw std::invalid_argument("sample: --text requires --text-head");
      auto head = fex4d::load_guidance(sm_text_head);
      std::unique_ptr<fex4d::TextEmbeddingProvider> provider;
      if (sm_embeddings.empty())
        provider = std::make_unique<fex4d::StubTextEmbedding>();
      else
        provider = std::make_unique<fex4d::FileTextEmbedding>(sm_embeddings);
      auto guide = fex4d::make_text_guide(head.model, provider->embed(sm_text));
      out_norm = fex4d::sample_guided(sm_count, sm_length, C, sched, noise_fn, guide, gcfg, gen);
    } else {
      out_norm = fex4d::sample_unconditional(sm_count, sm_length, C, sched, noise_fn, gen);
    }

    auto out_mm = fex4d::denormalize(
        out_norm.reshape({out_norm.size(0), out_norm.size(1), N, 3}), ckpt.stats);
    write_samples(sample_opts.out, out_mm.reshape({out_norm.size(0), out_norm.size(1), -1}),
                  out_label, out_type, N);
    write_manifest(sample_opts.out, "sample", cfg, sample_opts.seed);
    std::cout << "wrote " << out_norm.size(0) << " sequences to " << sample_opts.out << "\n";
    return 0;
  }

  if (*retarget) {
    auto cfg = load_cfg(ret_opts, true);
    auto ckpt = fex4d::load_retarget(ret_ckpt);
    fex4d::Mesh mesh = ret_mesh.ends_with(".ply") ? fex4d::read_ply(ret_mesh)
                                                  : fex4d::read_obj(ret_mesh);
    auto rec = fex4d::read_sequence(ret_seq);
    auto neutral_landmarks = fex4d::extract_neutral(rec);
    auto states = fex4d::retarget_sequence(ckpt.model, mesh.vertices, rec, neutral_landmarks);
    fs::create_directories(ret_opts.out);
    for (size_t f = 0; f < states.size(); ++f) {
      fex4d::Mesh frame{states[f].M_f, mesh.triangles};
      std::ostringstream name;
      name << "frame_" << std::setw(4) << std::setfill('0') << f << ".obj";
      fex4d::write_obj((fs::path(ret_opts.out) / name.str()).string(), frame);
    }
    write_manifest(ret_opts.out, "retarget", cfg, ret_opts.seed);
    std::cout << "wrote " << states.size() << " mesh frames to " << ret_opts.out << "\n";
    return 0;
  }

  if (*evaluate) {
    auto cfg = load_cfg(ev_opts, true);
    auto ckpt = fex4d::load_ic(ev_ic);
    auto gen_corpus = fex4d::read_corpus(ev_generated);
    auto ref_corpus = fex4d::read_corpus(ev_reference);
    auto gen_data = fex4d::label_corpus(gen_corpus, ckpt.stats, ckpt.order_sensitive);
    auto ref_data = fex4d::label_corpus(ref_corpus, ckpt.stats, ckpt.order_sensitive);
    auto report = fex4d::evaluate_generation(ckpt.model, gen_data, ref_data);
    fs::create_directories(ev_opts.out);
    std::ofstream(fs::path(ev_opts.out) / "report.txt") << report.to_text();
    std::ofstream(fs::path(ev_opts.out) / "report.csv") << report.to_csv();
    write_manifest(ev_opts.out, "evaluate", cfg, ev_opts.seed);
    std::cout << report.to_text();
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
