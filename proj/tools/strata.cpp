// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// strata: corpus generation, training, reconstruction, generation,
// allocation, evaluation and the HTTP service from one binary.
//
// --config takes a JSON file whose sections mirror the library structs:
//   {"seed", "corpus", "tokenizer", "plan", "dit", "dit_plan", "allocation", "service"}
// Flags given on the command line override the file.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "strata/allocation.hpp"
#include "strata/checkpoint.hpp"
#include "strata/evaluation.hpp"
#include "strata/image_io.hpp"
#include "strata/service.hpp"
#include "strata/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace strata;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  json cfg = json::object();

  std::uint64_t effective_seed() const {
    if (seed_opt->count() > 0) return seed;
    return cfg.value("seed", std::uint64_t{0});
  }
  json section(const char* name) const { return cfg.contains(name) ? cfg.at(name) : json::object(); }
  const std::string& require_out(const char* what) const {
    STRATA_CHECK(!out.empty(), "--out is required (", what, ")");
    return out;
  }
};

template <typename T>
void set_if(const CLI::Option* opt, T& dst, const T& value) {
  if (opt->count() > 0) dst = value;
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

// Scene sources: a corpus file, or a generated corpus.
struct SceneSource {
  std::string corpus;
  std::size_t count = 64;
  std::uint64_t offset = 0;  // added to the seed for generated corpora
  CLI::Option* count_opt = nullptr;

  void add(CLI::App* cmd, std::size_t default_count, std::uint64_t seed_offset) {
    count = default_count;
    offset = seed_offset;
    cmd->add_option("--corpus", corpus, "Corpus JSON written by data-gen (default: generate one)");
    count_opt = cmd->add_option("--count", count, "Scenes to generate when no --corpus is given")->capture_default_str();
  }

  std::vector<SceneSpec> load(const Globals& g) const {
    if (!corpus.empty()) return load_corpus(corpus);
    CorpusOptions opt;
    const json c = g.section("corpus");
    opt.min_complexity = c.value("min_complexity", opt.min_complexity);
    opt.max_complexity = c.value("max_complexity", opt.max_complexity);
    opt.classes = c.value("classes", opt.classes);
    opt.motion = c.value("motion", opt.motion);
    opt.count = count;
    opt.seed = g.effective_seed() + offset;
    return make_corpus(opt);
  }
};

struct ModelPaths {
  std::string ckpt_dir;
  std::string tokenizer;
  std::string dit;

  void add(CLI::App* cmd, bool with_dit) {
    cmd->add_option("--ckpt-dir", ckpt_dir, "Directory holding tokenizer/ and dit/ checkpoints");
    cmd->add_option("--tokenizer", tokenizer, "Tokenizer checkpoint (default: <ckpt-dir>/tokenizer)");
    if (with_dit) cmd->add_option("--dit", dit, "Diffusion checkpoint (default: <ckpt-dir>/dit)");
  }
  std::string tokenizer_path() const {
    if (!tokenizer.empty()) return tokenizer;
    STRATA_CHECK(!ckpt_dir.empty(), "pass --tokenizer or --ckpt-dir");
    return (fs::path(ckpt_dir) / "tokenizer").string();
  }
  std::string dit_path() const {
    if (!dit.empty()) return dit;
    STRATA_CHECK(!ckpt_dir.empty(), "pass --dit or --ckpt-dir");
    return (fs::path(ckpt_dir) / "dit").string();
  }
};

std::string metrics_path(const std::string& flag, const std::string& out) {
  return flag.empty() ? (fs::path(out) / "metrics.jsonl").string() : flag;
}

// data-gen ----------------------------------------------------------------------

struct DataGen {
  CorpusOptions opt{256, 1, 8, 4, 0, false};
  int render_size = 0;
  CLI::Option *count, *min_c, *max_c, *classes, *motion;

  void add(CLI::App* cmd) {
    count = cmd->add_option("--count", opt.count, "Number of scenes")->capture_default_str();
    min_c = cmd->add_option("--min-complexity", opt.min_complexity, "Fewest primitives per scene")->capture_default_str();
    max_c = cmd->add_option("--max-complexity", opt.max_complexity, "Most primitives per scene")->capture_default_str();
    classes = cmd->add_option("--classes", opt.classes, "Number of classes")->capture_default_str();
    motion = cmd->add_flag("--motion", opt.motion, "Give primitives velocities (video scenes)");
    cmd->add_option("--render-size", render_size, "Also write <out>.png/NNNNN.png at this square size (0: off)")
        ->capture_default_str();
  }

  void run(const Globals& g) {
    CorpusOptions o{256, 1, 8, 4, 0, false};
    const json c = g.section("corpus");
    o.count = c.value("count", o.count);
    o.min_complexity = c.value("min_complexity", o.min_complexity);
    o.max_complexity = c.value("max_complexity", o.max_complexity);
    o.classes = c.value("classes", o.classes);
    o.motion = c.value("motion", o.motion);
    set_if(count, o.count, opt.count);
    set_if(min_c, o.min_complexity, opt.min_complexity);
    set_if(max_c, o.max_complexity, opt.max_complexity);
    set_if(classes, o.classes, opt.classes);
    set_if(motion, o.motion, opt.motion);
    o.seed = g.effective_seed();
    const std::string& out = g.require_out("corpus JSON path");
    const auto corpus = make_corpus(o);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    save_corpus(corpus, out);
    if (render_size > 0) {
      const fs::path dir = fs::path(out).string() + ".png";
      fs::create_directories(dir);
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.png", i);
        write_png(render(corpus[i], ScaleSpec::image(render_size, render_size)), (dir / name).string());
      }
    }
    print({{"scenes", corpus.size()}, {"out", out}});
  }
};

// train-tok ---------------------------------------------------------------------

struct TrainTok {
  SceneSource train, heldout;
  int steps = 5000;
  int batch = 8;
  double lr = 1e-3;
  bool denoise = false;
  int log_every = 100;
  std::string metrics;
  CLI::Option *steps_opt, *batch_opt, *lr_opt, *denoise_opt, *log_opt;

  void add(CLI::App* cmd) {
    train.add(cmd, 2000, 0);
    cmd->add_option("--heldout", heldout.count, "Held-out scenes generated for PSNR reports")->capture_default_str();
    heldout.count = 64;
    steps_opt = cmd->add_option("--steps", steps, "Total steps of the scripted two-stage plan")->capture_default_str();
    batch_opt = cmd->add_option("--batch", batch, "Samples per step")->capture_default_str();
    lr_opt = cmd->add_option("--lr", lr, "AdamW learning rate")->capture_default_str();
    denoise_opt = cmd->add_flag("--denoise", denoise, "Perturb latents before decoding");
    log_opt = cmd->add_option("--log-every", log_every, "Steps between metric records")->capture_default_str();
    cmd->add_option("--metrics", metrics, "JSON-lines metrics file (default: <out>/metrics.jsonl)");
  }

  void run(const Globals& g) {
    const std::string& out = g.require_out("checkpoint directory");
    const TokenizerConfig cfg = tokenizer_config_from_json(g.section("tokenizer"));
    TrainPlan plan = g.cfg.contains("plan") ? train_plan_from_json(g.cfg.at("plan")) : toy_tokenizer_plan(steps);
    if (steps_opt->count() > 0) plan.stages = toy_tokenizer_plan(steps).stages;
    set_if(batch_opt, plan.batch, batch);
    set_if(lr_opt, plan.lr, lr);
    set_if(denoise_opt, plan.denoise, denoise);
    set_if(log_opt, plan.log_every, log_every);
    const std::uint64_t seed = g.effective_seed();
    plan.seed = seed;
    plan.validate();

    const auto scenes = train.load(g);
    heldout.offset = 999;
    const auto held = heldout.load(g);
    Tokenizer<float> tok(cfg, seed);
    fs::create_directories(out);
    TrainLog log{metrics_path(metrics, out), [](const json& rec) { std::cerr << rec.dump() << "\n"; }};
    const auto res = train_tokenizer(plan, tok, scenes, held, log);
    save_tokenizer(tok, out);
    print({{"steps", res.steps},
           {"initial_psnr", res.initial_psnr},
           {"final_psnr", res.final_psnr},
           {"asymmetric_pairs", res.asymmetric_pairs},
           {"out", out}});
  }
};

// train-dit ---------------------------------------------------------------------

struct TrainDiT {
  SceneSource train;
  std::string tokenizer;
  DiTTrainPlan flags;
  std::string metrics;
  CLI::Option *steps, *batch, *lr, *null_prob, *shared_t, *size, *log_every;

  void add(CLI::App* cmd) {
    train.add(cmd, 2000, 0);
    cmd->add_option("--tokenizer", tokenizer, "Frozen tokenizer checkpoint")->required();
    steps = cmd->add_option("--steps", flags.steps, "Optimizer steps")->capture_default_str();
    batch = cmd->add_option("--batch", flags.batch, "Samples per step")->capture_default_str();
    lr = cmd->add_option("--lr", flags.lr, "AdamW learning rate")->capture_default_str();
    null_prob = cmd->add_option("--null-prob", flags.null_prob, "Probability of training on the null class")
                    ->capture_default_str();
    shared_t = cmd->add_flag("--shared-t", flags.shared_t, "One timestep for all levels instead of one per level");
    size = cmd->add_option("--size", flags.size, "Square size the corpus is encoded at")->capture_default_str();
    log_every = cmd->add_option("--log-every", flags.log_every, "Steps between metric records")->capture_default_str();
    cmd->add_option("--metrics", metrics, "JSON-lines metrics file (default: <out>/metrics.jsonl)");
  }

  void run(const Globals& g) {
    const std::string& out = g.require_out("checkpoint directory");
    const auto tok = load_tokenizer(tokenizer);
    json dc = g.section("dit");
    if (!dc.contains("levels")) dc["levels"] = tok->config().levels;
    if (!dc.contains("latent_dim")) dc["latent_dim"] = tok->config().latent_dim;
    const DiTConfig cfg = dit_config_from_json(dc);
    DiTTrainPlan plan = g.cfg.contains("dit_plan") ? dit_train_plan_from_json(g.cfg.at("dit_plan")) : DiTTrainPlan{};
    set_if(steps, plan.steps, flags.steps);
    set_if(batch, plan.batch, flags.batch);
    set_if(lr, plan.lr, flags.lr);
    set_if(null_prob, plan.null_prob, flags.null_prob);
    set_if(shared_t, plan.shared_t, flags.shared_t);
    set_if(size, plan.size, flags.size);
    set_if(log_every, plan.log_every, flags.log_every);
    const std::uint64_t seed = g.effective_seed();
    plan.seed = seed;
    plan.validate();

    const auto scenes = train.load(g);
    DiT<float> model(cfg, seed);
    fs::create_directories(out);
    TrainLog log{metrics_path(metrics, out), [](const json& rec) { std::cerr << rec.dump() << "\n"; }};
    const auto res = train_dit(plan, model, *tok, scenes, log);
    save_dit(model, out);
    // Mean of the first and last quarter (at most 50 steps each).
    const auto k = std::max<std::size_t>(1, std::min<std::size_t>(res.losses.size() / 4, 50));
    double first = 0, last = 0;
    for (std::size_t i = 0; i < k; ++i) {
      first += res.losses[i];
      last += res.losses[res.losses.size() - 1 - i];
    }
    print({{"steps", res.steps},
           {"initial_loss", first / static_cast<double>(k)},
           {"final_loss", last / static_cast<double>(k)},
           {"null_fraction", static_cast<double>(res.null_samples) / static_cast<double>(res.samples)},
           {"out", out}});
  }
};

// Inputs for reconstruct / allocate: a PNG or one scene of a corpus.
struct ImageInput {
  std::string png;
  SceneSource source;
  std::size_t index = 0;
  int size = 32;

  void add(CLI::App* cmd) {
    cmd->add_option("--input", png, "PNG image");
    source.add(cmd, 64, 999);
    cmd->add_option("--index", index, "Scene index when reading from a corpus")->capture_default_str();
    cmd->add_option("--size", size, "Square size a corpus scene is rendered at")->capture_default_str();
  }
  bool from_scene() const { return png.empty(); }
  SceneSpec scene(const Globals& g) const {
    const auto scenes = source.load(g);
    STRATA_CHECK(index < scenes.size(), "scene index ", index, " out of range (", scenes.size(), " scenes)");
    return scenes[index];
  }
  Sample load(const Globals& g) const {
    if (!png.empty()) return read_png(png);
    return render(scene(g), ScaleSpec::image(size, size));
  }
};

// reconstruct -------------------------------------------------------------------

struct Reconstruct {
  ImageInput input;
  std::string tokenizer;
  int levels = 0;
  int height = 0, width = 0;

  void add(CLI::App* cmd) {
    input.add(cmd);
    cmd->add_option("--tokenizer", tokenizer, "Tokenizer checkpoint")->required();
    cmd->add_option("--levels", levels, "Levels per patch to decode with (default: all)");
    cmd->add_option("--height", height, "Decode height (default: input height)");
    cmd->add_option("--width", width, "Decode width (default: input width)");
  }

  void run(const Globals& g) {
    const auto tok = load_tokenizer(tokenizer);
    const std::uint32_t n = tok->config().levels;
    const auto m = static_cast<std::uint32_t>(levels > 0 ? levels : static_cast<int>(n));
    STRATA_CHECK(levels >= 0 && m <= n, "--levels ", levels, " outside [1, ", n, "]");
    const Sample in = input.load(g);
    const auto P = static_cast<std::size_t>(tok->geometry(in.scale).num_patches());
    const LatentGrid z = tok->encode(in, LevelBudget::uniform(P, n, n));
    ScaleSpec target = in.scale;
    if (height > 0) target.height = height;
    if (width > 0) target.width = width;
    const Sample outimg = tok->decode(z, target, LevelBudget::uniform(P, m, n));
    json rep{{"levels", m}, {"height", target.height}, {"width", target.width}};
    // Ground truth at the decode scale: exact for corpus scenes, the input
    // itself when the scale is unchanged.
    if (input.from_scene()) {
      const Sample gt = render(input.scene(g), target);
      rep["psnr"] = psnr(outimg, gt);
      rep["ssim"] = ssim(outimg, gt);
    } else if (target == in.scale) {
      rep["psnr"] = psnr(outimg, in);
      rep["ssim"] = ssim(outimg, in);
    }
    if (!g.out.empty()) {
      if (fs::path(g.out).has_parent_path()) fs::create_directories(fs::path(g.out).parent_path());
      write_png(outimg, g.out);
      rep["out"] = g.out;
    }
    print(rep);
  }
};

// generate ----------------------------------------------------------------------

struct Generate {
  ModelPaths models;
  int class_id = 0;
  int levels = 0;
  int height = 0, width = 0, fps = 0;
  int grid_t = 1;
  bool progressive = false;
  int steps = 0;
  double cfg = 0, cfg_interval = 0, shift = 0;
  CLI::Option *steps_opt, *cfg_opt, *interval_opt, *shift_opt;

  void add(CLI::App* cmd) {
    models.add(cmd, true);
    cmd->add_option("--class", class_id, "Class id; the null class id gives unconditional samples")
        ->capture_default_str();
    cmd->add_option("--levels", levels, "Levels to generate (default: all)");
    cmd->add_option("--height", height, "Decode height (default: 8 pixels per patch)");
    cmd->add_option("--width", width, "Decode width (default: 8 pixels per patch)");
    cmd->add_option("--fps", fps, "Decode frame rate; frames are written when the clip has more than one");
    cmd->add_option("--grid-t", grid_t, "Temporal latent segments")->capture_default_str();
    cmd->add_flag("--progressive", progressive, "Refine level by level with cached keys/values, writing level_{i}.png");
    steps_opt = cmd->add_option("--steps", steps, "Euler steps (default: model config)");
    cfg_opt = cmd->add_option("--cfg", cfg, "Guidance scale (default: model config)");
    interval_opt = cmd->add_option("--cfg-interval", cfg_interval, "No guidance below this t (default: model config)");
    shift_opt = cmd->add_option("--shift", shift, "Time-grid shift (default: model config)");
  }

  void write_image(const Sample& img, const fs::path& base) const {
    if (img.scale.frames == 1) {
      write_png(img, base.string() + ".png");
    } else {
      write_video_dir(img, base.string());
    }
  }

  void run(const Globals& g) {
    const std::string& out = g.require_out("output directory");
    const auto tok = load_tokenizer(models.tokenizer_path());
    const auto dit = load_dit(models.dit_path());
    const auto& tc = tok->config();
    const DiTConfig& dc = dit->config();
    STRATA_CHECK(tc.levels == dc.levels && tc.latent_dim == dc.latent_dim, "tokenizer and diffusion model disagree on n or d");
    const std::uint32_t n = dc.levels;
    const auto m = static_cast<std::uint32_t>(levels > 0 ? levels : static_cast<int>(n));
    STRATA_CHECK(levels >= 0 && m <= n, "--levels ", levels, " outside [1, ", n, "]");
    STRATA_CHECK(grid_t >= 1, "--grid-t must be >= 1");
    const GridDims grid{grid_t, tc.k, tc.k};
    SamplerOptions opt = SamplerOptions::defaults(dc);
    set_if(steps_opt, opt.steps, steps);
    set_if(cfg_opt, opt.cfg_scale, cfg);
    set_if(interval_opt, opt.cfg_interval, cfg_interval);
    set_if(shift_opt, opt.shift, shift);
    opt.validate();

    const int h = height > 0 ? height : 8 * grid.h;
    const int w = width > 0 ? width : 8 * grid.w;
    const int f = fps > 0 ? fps : tc.k_t;
    STRATA_CHECK((f * grid.t) % tc.k_t == 0, "fps ", f, " x ", grid.t, " segments must be a multiple of k_t = ", tc.k_t);
    const int frames = f * grid.t / tc.k_t;
    const ScaleSpec scale = frames == 1 ? ScaleSpec::image(h, w) : ScaleSpec{h, w, f, frames};
    geometry_for_grid(scale, grid, tc.k_t);

    const std::uint64_t seed = g.effective_seed();
    fs::create_directories(out);
    json rep{{"levels", m}, {"class_id", class_id}, {"seed", seed}, {"height", h}, {"width", w}, {"frames", frames}};
    LatentGrid z;
    if (progressive) {
      GenSession s = make_session(*dit, "cli", class_id, seed, grid, opt);
      json files = json::array();
      for (std::uint32_t l = 1; l <= m; ++l) {
        refine(*dit, s);
        const LatentGrid zl = s.latent_grid(n, dc.latent_dim);
        const fs::path base = fs::path(out) / ("level_" + std::to_string(l));
        write_image(tok->decode(zl, scale), base);
        files.push_back(base.filename().string() + (frames == 1 ? ".png" : ""));
      }
      z = s.latent_grid(n, dc.latent_dim);
      rep["files"] = files;
    } else {
      z = sample(*dit, class_id, m, grid, opt, seed);
      write_image(tok->decode(z, scale), fs::path(out) / "sample");
      rep["files"] = {frames == 1 ? "sample.png" : "sample"};
    }
    save_checkpoint(latents_to_checkpoint(z), (fs::path(out) / "latents").string());
    print(rep);
  }
};

// allocate ----------------------------------------------------------------------

struct Allocate {
  ImageInput input;
  AllocationParams flags;
  int k = 4;
  std::string tokenizer;
  CLI::Option *target, *lo, *hi, *iters, *t1, *t2;

  void add(CLI::App* cmd) {
    input.add(cmd);
    target = cmd->add_option("--target", flags.target, "Mean tokens per patch")->capture_default_str();
    lo = cmd->add_option("--min", flags.min_tokens, "Fewest tokens per patch")->capture_default_str();
    hi = cmd->add_option("--max", flags.max_tokens, "Most tokens per patch")->capture_default_str();
    iters = cmd->add_option("--iterations", flags.iterations, "Rescale iterations")->capture_default_str();
    t1 = cmd->add_option("--theta1", flags.theta1, "Suppression factor while over budget")->capture_default_str();
    t2 = cmd->add_option("--theta2", flags.theta2, "Final shrink factor")->capture_default_str();
    cmd->add_option("--k", k, "Patches along the shorter side (ignored with --tokenizer)")->capture_default_str();
    cmd->add_option("--tokenizer", tokenizer, "Take the patch grid from this tokenizer");
  }

  void run(const Globals& g) {
    AllocationParams p = allocation_params_from_json(g.section("allocation"));
    set_if(target, p.target, flags.target);
    set_if(lo, p.min_tokens, flags.min_tokens);
    set_if(hi, p.max_tokens, flags.max_tokens);
    set_if(iters, p.iterations, flags.iterations);
    set_if(t1, p.theta1, flags.theta1);
    set_if(t2, p.theta2, flags.theta2);
    p.validate();
    int kk = k, kt = 1;
    if (!tokenizer.empty()) {
      const auto tok = load_tokenizer(tokenizer);
      kk = tok->config().k;
      kt = tok->config().k_t;
    }
    const Sample img = input.load(g);
    const EntropyMap e = patch_entropy(img, patch_sizes(img.scale, kk, kt));
    json rep = to_json(allocate(e, p), p);
    rep["entropy_bits"] = e.bits;
    if (!g.out.empty()) {
      std::ofstream f(g.out);
      STRATA_CHECK(f.good(), "cannot write ", g.out);
      f << rep.dump(2) << "\n";
    }
    print(rep);
  }
};

// eval --------------------------------------------------------------------------

struct Eval {
  SceneSource scenes;
  std::string tokenizer;
  int size = 32;
  bool allocation = false;
  bool complexity = false;
  bool multiscale = false;

  void add(CLI::App* cmd) {
    scenes.add(cmd, 64, 999);
    cmd->add_option("--tokenizer", tokenizer, "Tokenizer checkpoint")->required();
    cmd->add_option("--size", size, "Square evaluation size")->capture_default_str();
    cmd->add_flag("--allocation", allocation, "Entropy-guided vs uniform allocation at mean 2, bounds [1, 3]");
    cmd->add_flag("--complexity", complexity, "Levels simple scenes need to match busy ones");
    cmd->add_flag("--multiscale", multiscale, "Decode at size and 2x size, compare after downsampling");
  }

  void run(const Globals& g) {
    const auto tok = load_tokenizer(tokenizer);
    const auto held = scenes.load(g);
    json rep{{"scenes", held.size()}, {"size", size}, {"psnr_per_level", psnr_per_level(*tok, held, size)}};
    if (allocation) {
      rep["allocation"] = allocation_rd_report(*tok, held, allocation_params_from_json(g.section("allocation")), size).to_json();
    }
    if (complexity) rep["complexity"] = complexity_report(*tok, held, size).to_json();
    if (multiscale) rep["multiscale"] = multiscale_report(*tok, held, size, 2 * size).to_json();
    if (!g.out.empty()) {
      std::ofstream f(g.out);
      STRATA_CHECK(f.good(), "cannot write ", g.out);
      f << rep.dump(2) << "\n";
    }
    print(rep);
  }
};

// serve -------------------------------------------------------------------------

struct Serve {
  std::string ckpt_dir;
  ServiceConfig flags;
  CLI::Option *host, *port, *cors, *idle, *snap, *max_sessions;

  void add(CLI::App* cmd) {
    cmd->add_option("--ckpt-dir", ckpt_dir, "Directory holding tokenizer/ and dit/ checkpoints")->required();
    host = cmd->add_option("--host", flags.host, "Bind address")->capture_default_str();
    port = cmd->add_option("--port", flags.port, "Port (0 picks a free one)")->capture_default_str();
    cors = cmd->add_option("--cors-origin", flags.cors_origin, "Allowed browser origin (empty disables CORS)")
               ->capture_default_str();
    idle = cmd->add_option("--idle-timeout", flags.idle_timeout_s, "Seconds before an untouched session is dropped")
               ->capture_default_str();
    snap = cmd->add_option("--snapshot-dir", flags.snapshot_dir, "Persist session latents here and restore on start");
    max_sessions = cmd->add_option("--max-sessions", flags.max_sessions, "Live session limit")->capture_default_str();
  }

  void run(const Globals& g) {
    ServiceConfig cfg;
    const json s = g.section("service");
    cfg.host = s.value("host", cfg.host);
    cfg.port = s.value("port", cfg.port);
    cfg.cors_origin = s.value("cors_origin", cfg.cors_origin);
    cfg.idle_timeout_s = s.value("idle_timeout_s", cfg.idle_timeout_s);
    cfg.snapshot_dir = s.value("snapshot_dir", cfg.snapshot_dir);
    cfg.max_sessions = s.value("max_sessions", cfg.max_sessions);
    set_if(host, cfg.host, flags.host);
    set_if(port, cfg.port, flags.port);
    set_if(cors, cfg.cors_origin, flags.cors_origin);
    set_if(idle, cfg.idle_timeout_s, flags.idle_timeout_s);
    set_if(snap, cfg.snapshot_dir, flags.snapshot_dir);
    set_if(max_sessions, cfg.max_sessions, flags.max_sessions);
    if (!cfg.snapshot_dir.empty()) fs::create_directories(cfg.snapshot_dir);
    Service service(cfg, load_models(ckpt_dir));
    const std::size_t restored = service.restore_snapshots();
    HttpServer server(service);
    const int bound = server.start();
    std::cerr << "serving on http://" << cfg.host << ":" << bound << " (" << restored << " sessions restored)\n";
    // start() serves on a background thread; park here until killed.
    for (;;) std::this_thread::sleep_for(std::chrono::hours(24));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical level-causal latent tokenizer and diffusion toolkit", "strata"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Random seed (default: config seed, else 0)");
  app.add_option("--config", g.config, "JSON config; command-line flags override it");
  app.add_option("--out", g.out, "Output path (file or directory, per command)");

  DataGen data_gen;
  TrainTok train_tok;
  TrainDiT train_dit_cmd;
  Reconstruct reconstruct;
  Generate generate;
  Allocate allocate_cmd;
  Eval eval;
  Serve serve;
  std::vector<std::pair<CLI::App*, std::function<void()>>> commands;
  auto sub = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* c = app.add_subcommand(name, help);
    cmd.add(c);
    commands.emplace_back(c, [&cmd, &g] { cmd.run(g); });
  };
  sub("data-gen", "Write a deterministic synthetic scene corpus", data_gen);
  sub("train-tok", "Train the tokenizer on the scripted multi-scale plan", train_tok);
  sub("train-dit", "Train the diffusion model on frozen tokenizer latents", train_dit_cmd);
  sub("reconstruct", "Encode an image and decode it with the first m levels", reconstruct);
  sub("generate", "Sample latents and decode them at a chosen scale", generate);
  sub("allocate", "Entropy-guided tokens-per-patch grid for one image", allocate_cmd);
  sub("eval", "Held-out reconstruction reports", eval);
  sub("serve", "HTTP API for progressive generation sessions", serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (!g.config.empty()) {
      std::ifstream f(g.config);
      STRATA_CHECK(f.good(), "cannot read config ", g.config);
      g.cfg = json::parse(f);
      STRATA_CHECK(g.cfg.is_object(), "config ", g.config, " must hold a JSON object");
    }
    for (auto& [c, run] : commands) {
      if (c->parsed()) run();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
