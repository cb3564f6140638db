#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fex4d/checkpoint.hpp"
#include "fex4d/config.hpp"
#include "fex4d/corpus.hpp"
#include "fex4d/eval.hpp"
#include "fex4d/mesh_io.hpp"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace fex4d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("sequence resampling") {
  SequenceRecord rec;
  SUBCASE("hand-interpolated 3 -> 5") {
    rec.landmarks = torch::tensor({0.f, 1.f, 0.f}).reshape({3, 1, 1});
    auto out = resample_sequence(rec, 5);
    auto v = out.landmarks.flatten();
    const float want[] = {0.f, 0.5f, 1.f, 0.5f, 0.f};
    for (int i = 0; i < 5; ++i) CHECK(v[i].item<float>() == doctest::Approx(want[i]));
  }
  SUBCASE("identity at target_F = F") {
    rec.landmarks = torch::randn({7, 4, 3});
    auto out = resample_sequence(rec, 7);
    CHECK(torch::allclose(out.landmarks, rec.landmarks, 1e-6, 1e-7));
  }
  SUBCASE("linear ramp stays linear with exact endpoints") {
    rec.landmarks = torch::linspace(0, 1, 20).reshape({20, 1, 1});
    auto out = resample_sequence(rec, 40);
    auto v = out.landmarks.flatten();
    CHECK(v[0].item<float>() == 0.0f);
    CHECK(v[39].item<float>() == 1.0f);
    auto want = torch::linspace(0, 1, 40);
    CHECK(torch::allclose(v, want, 1e-5, 1e-6));
  }
  SUBCASE("degenerate lengths rejected") {
    rec.landmarks = torch::randn({5, 4, 3});
    CHECK_THROWS_AS(resample_sequence(rec, 1), std::invalid_argument);
  }
}

TEST_CASE("neutral frame convention") {
  SequenceRecord rec;
  rec.landmarks = torch::randn({6, 4, 3});
  rec.type = SeqType::N2E;
  CHECK(torch::equal(extract_neutral(rec), rec.landmarks[0]));
  rec.type = SeqType::E2N;
  CHECK(torch::equal(extract_neutral(rec), rec.landmarks[5]));
  SUBCASE("constant sequence: both conventions agree") {
    rec.landmarks = torch::randn({1, 4, 3}).expand({6, 4, 3}).contiguous();
    rec.type = SeqType::N2E;
    auto a = extract_neutral(rec);
    rec.type = SeqType::E2N;
    CHECK(torch::equal(a, extract_neutral(rec)));
  }
}

TEST_CASE("synthetic corpus properties") {
  SUBCASE("bit-identical across runs with one seed") {
    auto a = make_synthetic_corpus(16, 2, 42);
    auto b = make_synthetic_corpus(16, 2, 42);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
      CHECK(torch::equal(a.records[i].landmarks, b.records[i].landmarks));
      CHECK(a.records[i].label == b.records[i].label);
      CHECK(a.records[i].type == b.records[i].type);
    }
  }

  SUBCASE("both sequence types and all classes appear") {
    auto corpus = make_synthetic_corpus(24, 3, 1);
    std::set<int> labels;
    std::set<int> types;
    for (const auto& r : corpus.records) {
      labels.insert(r.label);
      types.insert(static_cast<int>(r.type));
    }
    CHECK(labels == std::set<int>({0, 1, 2}));
    CHECK(types == std::set<int>({0, 1}));
  }

  SUBCASE("class displacement directions are well separated") {
    auto corpus = make_synthetic_corpus(40, 2, 2);
    // per class: norm of the mean apex displacement vs intra-class spread;
    // the class action peaks mid-clip, so probe the middle frame
    std::vector<std::vector<double>> norms(2);
    std::vector<torch::Tensor> peaks[2];
    for (const auto& r : corpus.records) {
      auto neutral = extract_neutral(r);
      auto peak = r.landmarks[r.frames() / 2];
      peaks[r.label].push_back((peak - neutral).flatten());
    }
    torch::Tensor mean0 = torch::stack(peaks[0]).mean(0);
    torch::Tensor mean1 = torch::stack(peaks[1]).mean(0);
    const double between = (mean0 - mean1).norm().item<double>();
    const double spread0 = (torch::stack(peaks[0]) - mean0).norm(2, 1).mean().item<double>();
    const double spread1 = (torch::stack(peaks[1]) - mean1).norm(2, 1).mean().item<double>();
    CHECK(between >= 3.0 * std::max(spread0, spread1));
  }

  SUBCASE("IC reaches 95% on the corpus") {
    auto corpus = make_synthetic_corpus(60, 2, 3);
    auto stats = compute_stats(corpus);
    auto data = label_corpus(corpus, stats, false);
    IndependentClassifier model(ICConfig{204, 32, 2});
    ICTrainSettings s;
    s.epochs = 40;
    s.lr = 0.01;  // the mid-clip action cue needs a hotter start than default
    s.seed = 4;
    auto result = train_ic(model, data, s);
    CHECK(result.held_out_accuracy >= 0.95);
  }
}

TEST_CASE("normalization round trip") {
  auto corpus = make_synthetic_corpus(20, 2, 5);
  auto stats = compute_stats(corpus);
  SUBCASE("inverse pair") {
    auto x = corpus.records[3].landmarks;
    auto back = denormalize(normalize(x, stats), stats);
    CHECK(torch::allclose(back, x, 1e-5, 1e-5));
  }
  SUBCASE("standardized corpus has mean 0, std 1") {
    std::vector<torch::Tensor> frames;
    for (const auto& r : corpus.records) frames.push_back(normalize(r.landmarks, stats));
    auto all = torch::cat(frames, 0);  // [sum F, N, 3]
    CHECK(all.mean().abs().item<double>() < 1e-3);
    auto stds = all.reshape({all.size(0), -1}).std(0, false);
    CHECK((stds - 1.0).abs().max().item<double>() < 1e-2);
  }
}

TEST_CASE("sequence and corpus files round-trip bit-exactly") {
  TempDir dir("fex4d_seq_io");
  auto corpus = make_synthetic_corpus(6, 2, 6);
  SUBCASE("single sequence") {
    const auto path = (dir.path / "one.4dfm").string();
    write_sequence(path, corpus.records[0]);
    auto back = read_sequence(path);
    CHECK(torch::equal(back.landmarks, corpus.records[0].landmarks));
    CHECK(back.label == corpus.records[0].label);
    CHECK(back.type == corpus.records[0].type);
  }
  SUBCASE("whole corpus directory") {
    write_corpus((dir.path / "corpus").string(), corpus);
    auto back = read_corpus((dir.path / "corpus").string());
    CHECK(back.n_classes == corpus.n_classes);
    REQUIRE(back.records.size() == corpus.records.size());
    for (size_t i = 0; i < corpus.records.size(); ++i)
      CHECK(torch::equal(back.records[i].landmarks, corpus.records[i].landmarks));
  }
  SUBCASE("bad magic is rejected") {
    const auto path = (dir.path / "bad.4dfm").string();
    std::ofstream(path) << "not a sequence file";
    CHECK_THROWS(read_sequence(path));
  }
}

TEST_CASE("mesh file round trips") {
  TempDir dir("fex4d_mesh_io");
  Mesh mesh;
  mesh.vertices = torch::randn({20, 3});
  for (int i = 0; i + 2 < 20; i += 3)
    mesh.triangles.push_back({int64_t{i}, int64_t{i + 1}, int64_t{i + 2}});

  SUBCASE("obj") {
    const auto path = (dir.path / "m.obj").string();
    write_obj(path, mesh);
    auto back = read_obj(path);
    CHECK(torch::allclose(back.vertices, mesh.vertices, 1e-5, 1e-5));
    CHECK((back.triangles == mesh.triangles));
  }
  SUBCASE("ply") {
    const auto path = (dir.path / "m.ply").string();
    write_ply(path, mesh);
    auto back = read_ply(path);
    CHECK(torch::equal(back.vertices, mesh.vertices));  // binary: bit-exact
    CHECK((back.triangles == mesh.triangles));
  }
  SUBCASE("landmark index file") {
    const auto path = (dir.path / "lm.txt").string();
    std::vector<int64_t> idx{3, 1, 4, 1, 5, 9};
    write_landmark_indices(path, idx);
    CHECK(read_landmark_indices(path) == idx);
  }
}

TEST_CASE("config parsing and validation") {
  SUBCASE("defaults describe the full-scale setup") {
    RunConfig cfg;
    CHECK(cfg.schedule_T == 2000);
    CHECK(cfg.beta_start == doctest::Approx(1e-4));
    CHECK(cfg.beta_end == doctest::Approx(0.02));
    CHECK(cfg.lr == doctest::Approx(1e-4));
    CHECK(cfg.batch_size == 256);
    CHECK(cfg.train_iters == 200000);
    CHECK(cfg.lambda == doctest::Approx(0.01));
    CHECK(cfg.opt_steps == 3);
    CHECK(cfg.harmonization_iters == 5);
    CHECK_NOTHROW(cfg.validate());
  }
  SUBCASE("desk profile shrinks the expensive knobs") {
    auto cfg = desk_profile();
    CHECK(cfg.schedule_T == 200);
    CHECK(cfg.denoiser_dim >= cfg.n_landmarks * 3);
    CHECK(cfg.denoiser_layers < RunConfig{}.denoiser_layers);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.train_iters == 5000);
    CHECK_NOTHROW(cfg.validate());
  }
  SUBCASE("round trip through text") {
    auto cfg = desk_profile();
    auto back = parse_config_text(cfg.to_text());
    CHECK(back.hash() == cfg.hash());
  }
  SUBCASE("unknown keys and malformed values rejected") {
    CHECK_THROWS_AS(parse_config_text("no_such_knob=1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("schedule_T=banana\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("schedule_T=1\n"), std::invalid_argument);
  }
  SUBCASE("environment override wins") {
    setenv("FEX4D_SCHEDULE_T", "77", 1);
    auto cfg = parse_config_text("schedule_T=100\n");
    unsetenv("FEX4D_SCHEDULE_T");
    CHECK(cfg.schedule_T == 77);
  }
  SUBCASE("hash changes with any field") {
    RunConfig a, b;
    b.lambda = 0.02;
    CHECK(a.hash() != b.hash());
  }
}

TEST_CASE("checkpoints restore models exactly") {
  TempDir dir("fex4d_ckpt");
  auto corpus = make_synthetic_corpus(8, 2, 7);
  auto stats = compute_stats(corpus);

  SUBCASE("denoiser") {
    DenoiserConfig dc;
    dc.layers = 1;
    dc.heads = 2;
    dc.model_dim = 32;
    dc.feedforward_dim = 64;
    dc.dropout = 0.0;
    torch::manual_seed(8);
    SequenceDenoiser model(dc);
    {
      torch::NoGradGuard ng;
      for (auto& p : model->parameters()) p.normal_(0, 0.05);
    }
    const auto path = (dir.path / "d.ckpt").string();
    save_denoiser(path, model, {50, 1e-4, 0.02}, stats);
    auto back = load_denoiser(path);
    CHECK(back.schedule.T == 50);
    CHECK(torch::equal(back.stats.mean, stats.mean));
    model->eval();
    back.model->eval();
    auto x = torch::randn({1, 6, 204});
    auto t = torch::tensor({int64_t{3}});
    CHECK(torch::equal(model->forward(x, t), back.model->forward(x, t)));
  }

  SUBCASE("guidance") {
    GuidanceNetConfig gc;
    gc.layers = 1;
    gc.heads = 2;
    gc.model_dim = 32;
    gc.feedforward_dim = 64;
    gc.out_dim = 4;
    gc.order_sensitive = true;
    torch::manual_seed(9);
    GuidanceBiT model(gc);
    const auto path = (dir.path / "g.ckpt").string();
    save_guidance(path, model, {50, 1e-4, 0.02}, stats);
    auto back = load_guidance(path);
    CHECK(back.model->config().out_dim == 4);
    CHECK(back.model->config().order_sensitive);
    model->eval();
    back.model->eval();
    auto x = torch::randn({1, 6, 204});
    auto t = torch::tensor({int64_t{3}});
    CHECK(torch::equal(model->log_probs(x, t), back.model->log_probs(x, t)));
  }

  SUBCASE("independent classifier") {
    torch::manual_seed(10);
    IndependentClassifier model(ICConfig{204, 16, 2});
    const auto path = (dir.path / "ic.ckpt").string();
    save_ic(path, model, stats, true);
    auto back = load_ic(path);
    CHECK(back.order_sensitive);
    auto x = torch::randn({2, 6, 204});
    auto lens = torch::tensor({int64_t{6}, int64_t{4}});
    CHECK(torch::equal(model->forward(x, lens), back.model->forward(x, lens)));
  }

  SUBCASE("retargeter") {
    MeshCorpusOptions opts;
    opts.grid_w = 6;
    opts.grid_h = 5;
    opts.n_subjects = 2;
    opts.samples_per_subject = 2;
    opts.n_landmarks = 8;
    auto mc = make_synthetic_mesh_corpus(11, opts);
    auto topo = build_spirals(mc.base.vertices.size(0), mc.base.triangles, 5);
    RetargetConfig rc;
    rc.n_landmarks = 8;
    rc.feature_dim = 16;
    rc.spiral_len = 5;
    torch::manual_seed(12);
    RetargetNet model(topo, rc);
    const auto path = (dir.path / "rt.ckpt").string();
    save_retarget(path, model, topo, mc.landmark_idx);
    auto back = load_retarget(path);
    CHECK(back.landmark_idx == mc.landmark_idx);
    CHECK(torch::equal(back.topology.spirals, topo.spirals));
    auto dl = torch::randn({8 * 3});
    auto a = retarget_frame(model, mc.base.vertices, dl);
    auto b = retarget_frame(back.model, mc.base.vertices, dl);
    CHECK(torch::equal(a.M_f, b.M_f));
  }

  SUBCASE("wrong kind is rejected") {
    torch::manual_seed(13);
    IndependentClassifier model(ICConfig{204, 16, 2});
    const auto path = (dir.path / "kind.ckpt").string();
    save_ic(path, model, stats, false);
    CHECK_THROWS(load_denoiser(path));
  }

  SUBCASE("missing file is rejected") {
    CHECK_THROWS(load_denoiser((dir.path / "nope.ckpt").string()));
  }
}

#ifdef FEX4D_CLI_PATH
TEST_CASE("command-line tool basics") {
  TempDir dir("fex4d_cli");
  const std::string cli = FEX4D_CLI_PATH;
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
  };

  SUBCASE("make-synthetic is deterministic per seed") {
    const auto a = dir.path / "a";
    const auto b = dir.path / "b";
    CHECK(run("make-synthetic --out " + a.string() + " --sequences 6 --seed 3") == 0);
    CHECK(run("make-synthetic --out " + b.string() + " --sequences 6 --seed 3") == 0);
    auto ca = read_corpus(a.string());
    auto cb = read_corpus(b.string());
    REQUIRE(ca.records.size() == cb.records.size());
    for (size_t i = 0; i < ca.records.size(); ++i)
      CHECK(torch::equal(ca.records[i].landmarks, cb.records[i].landmarks));
    CHECK(fs::exists(a / "make-synthetic_manifest.json"));
  }

  SUBCASE("missing checkpoint and bad config exit nonzero") {
    CHECK(run("sample --checkpoint nope.ckpt --out " + (dir.path / "x").string()) != 0);
    std::ofstream(dir.path / "bad.cfg") << "nonsense_key=1\n";
    CHECK(run("make-synthetic --out " + (dir.path / "y").string() + " --config " +
              (dir.path / "bad.cfg").string()) != 0);
  }
}
#endif
