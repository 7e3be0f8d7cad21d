// egovit command-line tool: dataset synthesis, training, evaluation, ablation
// grids and the diagnostic analyses, all emitting plain CSV/JSON/PGM files.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "egovit/analysis.hpp"
#include "egovit/train.hpp"

namespace fs = std::filesystem;
using namespace egovit;

namespace {

int max_threads() {
  const char* env = std::getenv("EGOVIT_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

nlohmann::json read_json(const fs::path& path) {
  return nlohmann::json::parse(io::read_file(path));
}

struct LoadedConfig {
  EgoViTConfig model;
  TrainConfig train;
};

LoadedConfig load_config(const fs::path& path) {
  nlohmann::json root = read_json(path);
  LoadedConfig c;
  c.model = parse_model_config(root);
  c.train = parse_train_config(root);
  return c;
}

std::string json_dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

int cmd_gen_synth(const fs::path& spec_path, const fs::path& out_dir, std::uint64_t seed,
                  bool seed_set) {
  SyntheticSpec spec = parse_synthetic_spec(read_json(spec_path));
  if (seed_set) spec.rng_seed = seed;
  std::vector<LabeledClip> clips = generate_synthetic_dataset(spec);
  write_dataset(clips, out_dir);
  nlohmann::json manifest{{"clips", clips.size()},
                          {"num_classes", spec.num_classes},
                          {"rng_seed", spec.rng_seed}};
  io::atomic_write_file(out_dir / "manifest.json", json_dump(manifest));
  std::printf("wrote %zu clips to %s\n", clips.size(), out_dir.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

void write_trace_files(const EgoViTConfig& cfg, const EgoViTParams& params,
                       const LabeledClip& clip, const fs::path& out_dir) {
  ForwardTrace trace;
  egovit_forward(cfg, params, clip.video, clip.features, &trace);
  AttentionMap map = extract_spatial_attention(trace);
  std::string csv = "frame,row,col,weight\n";
  char buf[96];
  const int h = map.grid.dim(1), w = map.grid.dim(2);
  for (int t = 0; t < map.grid.dim(0); ++t)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.12g\n", t, r, c,
                      map.grid.at((static_cast<std::size_t>(t) * h + r) * w + c));
        csv += buf;
      }
  io::atomic_write_file(out_dir / "attention_map.csv", csv);
  write_attention_pgms(map, out_dir, "attention");
  if (trace.has_merge) {
    Tensor scores = phase_scores(trace);
    std::string pcsv = "phase,score\n";
    for (int g = 0; g < scores.dim(0); ++g) {
      std::snprintf(buf, sizeof(buf), "%d,%.12g\n", g, scores.at(static_cast<std::size_t>(g)));
      pcsv += buf;
    }
    io::atomic_write_file(out_dir / "phase_scores.csv", pcsv);
  }
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out_dir,
              std::uint64_t seed, bool seed_set, bool retain_trace) {
  LoadedConfig cfg = load_config(config_path);
  if (seed_set) cfg.train.seed = seed;
  std::vector<LabeledClip> clips = load_dataset(data_dir);
  EgoViTParams params = init_params(cfg.model, cfg.train.seed);
  TrainLog log = train(cfg.model, params, clips, cfg.train);
  fs::create_directories(out_dir);
  io::atomic_write_file(out_dir / "train_log.csv", train_log_csv(log));
  save_params(params, out_dir / "params.bin");
  nlohmann::json summary{{"steps", cfg.train.steps},
                         {"final_accuracy", log.final_accuracy},
                         {"best_accuracy", log.best_accuracy},
                         {"first_full_accuracy_step", log.first_full_accuracy_step},
                         {"params", param_count(params)},
                         {"seed", cfg.train.seed}};
  io::atomic_write_file(out_dir / "summary.json", json_dump(summary));
  if (retain_trace) write_trace_files(cfg.model, params, clips.front(), out_dir);
  std::printf("final train accuracy %.4f after %d steps (%s)\n", log.final_accuracy,
              cfg.train.steps, (out_dir / "train_log.csv").string().c_str());
  return 0;
}

int cmd_eval(const fs::path& config_path, const fs::path& params_path, const fs::path& data_dir,
             const fs::path& out_dir, bool retain_trace) {
  LoadedConfig cfg = load_config(config_path);
  EgoViTParams params = load_params(cfg.model, params_path);
  std::vector<LabeledClip> clips = load_dataset(data_dir);
  double acc = evaluate_accuracy(cfg.model, params, clips);
  std::printf("accuracy %.6f (%d/%zu)\n", acc, static_cast<int>(std::lround(acc * clips.size())),
              clips.size());
  fs::create_directories(out_dir);
  nlohmann::json summary{{"accuracy", acc}, {"clips", clips.size()}};
  io::atomic_write_file(out_dir / "eval.json", json_dump(summary));
  if (retain_trace) write_trace_files(cfg.model, params, clips.front(), out_dir);
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationCell {
  std::string grid;  // "flags" or "dctg_variant"
  ModelFamily family = ModelFamily::full;
  InterFeature inter_feature = InterFeature::avg;
  InterFrame inter_frame = InterFrame::lstm;
  int groups = 0;       // 0 = n/a
  double dr = 0.0;      // 0 = n/a
};

int cmd_ablate(const fs::path& config_path, const fs::path& grid_path, const fs::path& data_dir,
               const fs::path& out_dir, std::uint64_t seed, bool seed_set) {
  LoadedConfig base = load_config(config_path);
  if (seed_set) base.train.seed = seed;
  nlohmann::json grid = read_json(grid_path);
  detail::reject_unknown_keys(grid, "grid",
                              {"families", "G", "DR", "dctg_variants", "steps", "synth"});

  std::vector<LabeledClip> clips;
  if (!data_dir.empty()) {
    clips = load_dataset(data_dir);
  } else {
    SyntheticSpec spec;
    if (grid.contains("synth")) {
      spec = parse_synthetic_spec(grid.at("synth"));
    } else {
      spec.num_classes = base.model.num_classes;
      spec.t = base.model.t;
      spec.h = base.model.h;
      spec.w = base.model.w;
      spec.channels = base.model.c;
      spec.f_det = base.model.dctg.f_det;
      spec.rng_seed = base.train.seed;
    }
    clips = generate_synthetic_dataset(spec);
  }
  TrainConfig tc = base.train;
  tc.steps = grid.value("steps", tc.steps);

  std::vector<AblationCell> cells;
  std::vector<std::string> families = grid.value("families", std::vector<std::string>{
                                                                 "baseline", "dctg", "padm", "full"});
  std::vector<int> gs = grid.value("G", std::vector<int>{base.model.groups});
  std::vector<double> drs = grid.value("DR", std::vector<double>{base.model.depth_ratio});
  for (const std::string& fam_name : families) {
    ModelFamily fam = parse_family(fam_name);
    const bool padm_on = fam == ModelFamily::padm_only || fam == ModelFamily::full;
    if (!padm_on) {
      AblationCell cell;
      cell.grid = "flags";
      cell.family = fam;
      cell.inter_feature = base.model.dctg.inter_feature;
      cell.inter_frame = base.model.dctg.inter_frame;
      cells.push_back(cell);
      continue;
    }
    for (int g : gs)
      for (double dr : drs) {
        AblationCell cell;
        cell.grid = "flags";
        cell.family = fam;
        cell.inter_feature = base.model.dctg.inter_feature;
        cell.inter_frame = base.model.dctg.inter_frame;
        cell.groups = g;
        cell.dr = dr;
        cells.push_back(cell);
      }
  }
  if (grid.contains("dctg_variants")) {
    for (const auto& v : grid.at("dctg_variants")) {
      AblationCell cell;
      cell.grid = "dctg_variant";
      cell.family = ModelFamily::dctg_only;
      cell.inter_feature = parse_inter_feature(v.at(0).get<std::string>());
      cell.inter_frame = parse_inter_frame(v.at(1).get<std::string>());
      cells.push_back(cell);
    }
  }

  struct Row {
    std::string text;
  };
  std::vector<Row> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const AblationCell& cell = cells[i];
      EgoViTConfig cfg = make_baseline(base.model, cell.family);
      cfg.dctg.inter_feature = cell.inter_feature;
      cfg.dctg.inter_frame = cell.inter_frame;
      if (cell.groups > 0) cfg.groups = cell.groups;
      if (cell.dr > 0.0) cfg.depth_ratio = cell.dr;
      cfg.validate();
      EgoViTParams params = init_params(cfg, tc.seed);
      TrainLog log = train(cfg, params, clips, tc);
      CostReport cost = attention_cost(cfg);
      char name[128];
      std::snprintf(name, sizeof(name), "cell_%03zu_%s_%s", i, cell.grid.c_str(),
                    to_string(cell.family));
      fs::path cell_dir = out_dir / name;
      fs::create_directories(cell_dir);
      io::atomic_write_file(cell_dir / "train_log.csv", train_log_csv(log));
      char buf[320];
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%d,%g,%zu,%lld,%.9g,%.6g,%.3f\n",
                    cell.grid.c_str(), to_string(cell.family), to_string(cell.inter_feature),
                    to_string(cell.inter_frame), cell.groups, cell.dr, param_count(params),
                    cost.attention_macs(), log.steps.empty() ? 0.0 : log.steps.back().loss,
                    log.final_accuracy, log.steps.empty() ? 0.0 : log.steps.back().seconds);
      rows[i].text = buf;
    }
  };
  const int threads = std::min<int>(max_threads(), static_cast<int>(cells.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::string csv =
      "grid,family,inter_feature,inter_frame,G,DR,params,attention_macs,final_loss,"
      "train_acc,seconds\n";
  for (const Row& r : rows) csv += r.text;
  fs::create_directories(out_dir);
  io::atomic_write_file(out_dir / "ablation.csv", csv);
  std::printf("wrote %zu ablation rows to %s\n", rows.size(),
              (out_dir / "ablation.csv").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// analysis commands
// ---------------------------------------------------------------------------

ForwardTrace trace_for_clip(const LoadedConfig& cfg, const fs::path& params_path,
                            const fs::path& data_dir, int clip_index, int* label = nullptr) {
  EgoViTParams params = load_params(cfg.model, params_path);
  std::vector<LabeledClip> clips = load_dataset(data_dir);
  detail::require(clip_index >= 0 && clip_index < static_cast<int>(clips.size()),
                  "clip index out of range");
  const LabeledClip& clip = clips[static_cast<std::size_t>(clip_index)];
  if (label) *label = clip.label;
  ForwardTrace trace;
  egovit_forward(cfg.model, params, clip.video, clip.features, &trace);
  return trace;
}

int cmd_attn_map(const fs::path& config_path, const fs::path& params_path,
                 const fs::path& data_dir, const fs::path& out_dir, int clip_index) {
  LoadedConfig cfg = load_config(config_path);
  ForwardTrace trace = trace_for_clip(cfg, params_path, data_dir, clip_index);
  AttentionMap map = extract_spatial_attention(trace);
  fs::create_directories(out_dir);
  std::string csv = "frame,row,col,weight\n";
  char buf[96];
  const int h = map.grid.dim(1), w = map.grid.dim(2);
  for (int t = 0; t < map.grid.dim(0); ++t)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.12g\n", t, r, c,
                      map.grid.at((static_cast<std::size_t>(t) * h + r) * w + c));
        csv += buf;
      }
  io::atomic_write_file(out_dir / "attention_map.csv", csv);
  write_attention_pgms(map, out_dir, "attention");
  std::printf("wrote attention map (%dx%dx%d) to %s\n", map.grid.dim(0), h, w,
              out_dir.string().c_str());
  return 0;
}

int cmd_phase_scores(const fs::path& config_path, const fs::path& params_path,
                     const fs::path& data_dir, const fs::path& out_dir) {
  LoadedConfig cfg = load_config(config_path);
  EgoViTParams params = load_params(cfg.model, params_path);
  std::vector<LabeledClip> clips = load_dataset(data_dir);
  std::string csv = "clip,label,phase,score\n";
  char buf[96];
  for (std::size_t i = 0; i < clips.size(); ++i) {
    ForwardTrace trace;
    egovit_forward(cfg.model, params, clips[i].video, clips[i].features, &trace);
    Tensor scores = phase_scores(trace);
    for (int g = 0; g < scores.dim(0); ++g) {
      std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%.12g\n", i, clips[i].label, g,
                    scores.at(static_cast<std::size_t>(g)));
      csv += buf;
    }
  }
  fs::create_directories(out_dir);
  io::atomic_write_file(out_dir / "phase_scores.csv", csv);
  std::printf("wrote phase scores for %zu clips to %s\n", clips.size(),
              (out_dir / "phase_scores.csv").string().c_str());
  return 0;
}

int cmd_pca_temporal(const fs::path& config_path, const fs::path& params_path,
                     const fs::path& data_dir, const fs::path& out_dir, int clip_index,
                     int components) {
  LoadedConfig cfg = load_config(config_path);
  ForwardTrace trace = trace_for_clip(cfg, params_path, data_dir, clip_index);
  Tensor vectors = temporal_feature_vectors(trace);
  PcaResult pca = pca_project(vectors, components);
  fs::create_directories(out_dir);
  char buf[96];
  std::string csv = "position,component,coordinate\n";
  for (int i = 0; i < pca.coords.dim(0); ++i)
    for (int c = 0; c < pca.coords.dim(1); ++c) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.12g\n", i, c,
                    pca.coords.at(static_cast<std::size_t>(i) * components + c));
      csv += buf;
    }
  io::atomic_write_file(out_dir / "pca_coords.csv", csv);
  std::string ev = "component,explained_variance\n";
  for (int c = 0; c < components; ++c) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g\n", c,
                  pca.explained_variance.at(static_cast<std::size_t>(c)));
    ev += buf;
  }
  io::atomic_write_file(out_dir / "pca_variance.csv", ev);
  std::printf("wrote %dx%d PCA coordinates to %s\n", pca.coords.dim(0), components,
              out_dir.string().c_str());
  return 0;
}

int cmd_flops(const fs::path& config_path, const fs::path& out_dir) {
  LoadedConfig cfg = load_config(config_path);
  CostReport report = attention_cost(cfg.model);
  fs::create_directories(out_dir);
  io::atomic_write_file(out_dir / "attention_cost.csv", cost_report_csv(report));
  std::printf("attention MACs %lld, projection MACs %lld (%s)\n", report.attention_macs(),
              report.projection_macs(), (out_dir / "attention_cost.csv").string().c_str());
  return 0;
}

int cmd_grad_check(const fs::path& config_path, std::uint64_t seed, bool seed_set) {
  LoadedConfig cfg = load_config(config_path);
  EgoViTParams params = init_params(cfg.model, seed_set ? seed : 1);
  SyntheticSpec spec;
  spec.num_classes = cfg.model.num_classes;
  spec.clips_per_class = 1;
  spec.t = cfg.model.t;
  spec.h = cfg.model.h;
  spec.w = cfg.model.w;
  spec.channels = cfg.model.c;
  spec.f_det = cfg.model.dctg.f_det;
  spec.rng_seed = seed_set ? seed : 1;
  LabeledClip clip = generate_synthetic_dataset(spec)[0];

  std::vector<Tensor> all = params.all();
  params.zero_grads();
  auto loss_fn = [&]() {
    Tensor logits = egovit_forward(cfg.model, params, clip.video, clip.features);
    return cross_entropy(logits, clip.label);
  };
  {
    GradMode on(true);
    loss_fn().backward();
  }
  auto scalar = [&]() { return loss_fn().item(); };
  std::vector<double> numeric = finite_diff_grad(scalar, all);
  GradCheckResult r = compare_grads(all, numeric);
  std::printf("grad-check: %zu parameters, max relative error %.3e (analytic %.6e vs numeric %.6e)\n",
              tensor_list_scalar_count(all), r.max_rel_err, r.analytic_at_worst,
              r.numeric_at_worst);
  if (!(r.max_rel_err < 1e-4)) {
    std::fprintf(stderr, "grad-check FAILED: relative error %.3e >= 1e-4\n", r.max_rel_err);
    return 3;
  }
  std::printf("grad-check passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EgoViT: pyramid video transformer with dynamic class tokens"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, params_path, spec_path, grid_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool retain_trace = false;
  int clip_index = 0;
  int components = 2;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* gen = app.add_subcommand("gen-synth", "generate a synthetic labeled dataset");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  add_seed(gen);

  CLI::App* tr = app.add_subcommand("train", "train a model on a dataset directory");
  tr->add_option("--config", config_path, "model/train config JSON")->required();
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_flag("--retain-trace", retain_trace, "also write trace analyses for clip 0");
  add_seed(tr);

  CLI::App* ev = app.add_subcommand("eval", "evaluate saved parameters");
  ev->add_option("--config", config_path, "model config JSON")->required();
  ev->add_option("--params", params_path, "params.bin checkpoint")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_flag("--retain-trace", retain_trace, "also write trace analyses for clip 0");

  CLI::App* ab = app.add_subcommand("ablate", "run the flag/variant ablation grids");
  ab->add_option("--config", config_path, "base config JSON")->required();
  ab->add_option("--grid", grid_path, "grid JSON")->required();
  ab->add_option("--data", data_dir, "dataset directory (optional; synthesized otherwise)");
  ab->add_option("--out", out_dir, "output directory")->required();
  add_seed(ab);

  CLI::App* am = app.add_subcommand("attn-map", "emit the class-token spatial attention map");
  am->add_option("--config", config_path)->required();
  am->add_option("--params", params_path)->required();
  am->add_option("--data", data_dir)->required();
  am->add_option("--out", out_dir)->required();
  am->add_option("--clip", clip_index, "clip index (default 0)");

  CLI::App* ps = app.add_subcommand("phase-scores", "emit per-clip phase score distributions");
  ps->add_option("--config", config_path)->required();
  ps->add_option("--params", params_path)->required();
  ps->add_option("--data", data_dir)->required();
  ps->add_option("--out", out_dir)->required();

  CLI::App* pc = app.add_subcommand("pca-temporal", "PCA of last-block temporal feature vectors");
  pc->add_option("--config", config_path)->required();
  pc->add_option("--params", params_path)->required();
  pc->add_option("--data", data_dir)->required();
  pc->add_option("--out", out_dir)->required();
  pc->add_option("--clip", clip_index, "clip index (default 0)");
  pc->add_option("--components", components, "number of components (default 2)");

  CLI::App* fl = app.add_subcommand("flops", "analytic attention-cost report for a config");
  fl->add_option("--config", config_path)->required();
  fl->add_option("--out", out_dir)->required();

  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  gc->add_option("--config", config_path)->required();
  add_seed(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(spec_path, out_dir, seed, seed_set);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, seed, seed_set, retain_trace);
    if (ev->parsed()) return cmd_eval(config_path, params_path, data_dir, out_dir, retain_trace);
    if (ab->parsed()) return cmd_ablate(config_path, grid_path, data_dir, out_dir, seed, seed_set);
    if (am->parsed()) return cmd_attn_map(config_path, params_path, data_dir, out_dir, clip_index);
    if (ps->parsed()) return cmd_phase_scores(config_path, params_path, data_dir, out_dir);
    if (pc->parsed())
      return cmd_pca_temporal(config_path, params_path, data_dir, out_dir, clip_index, components);
    if (fl->parsed()) return cmd_flops(config_path, out_dir);
    if (gc->parsed()) return cmd_grad_check(config_path, seed, seed_set);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
