#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "egovit/dctg.hpp"
#include "egovit/padm.hpp"

namespace egovit {

enum class BackboneKind { global, windowed };

inline BackboneKind parse_backbone(const std::string& s) {
  if (s == "global") return BackboneKind::global;
  if (s == "windowed") return BackboneKind::windowed;
  throw std::invalid_argument("model.backbone must be 'global' or 'windowed', got '" + s + "'");
}

inline const char* to_string(BackboneKind b) {
  return b == BackboneKind::global ? "global" : "windowed";
}

struct EgoViTConfig {
  // clip
  int t = 8, h = 16, w = 16, c = 3;
  // embedding
  PatchConfig patch{2, 4, 4, 16};
  int heads = 1;
  double mlp_ratio = 4.0;
  // windows (spatial extents, both stages; window_t only for the non-PADM
  // windowed baseline, 0 = full temporal span)
  int window_h = 2, window_w = 2;
  int window_t = 0;
  int num_classes = 4;
  BackboneKind backbone = BackboneKind::windowed;
  bool use_dctg = true;
  bool use_padm = true;
  int stage2_merges = 0;  // merge i runs after stage-2 block i
  DctgConfig dctg;
  // pyramid
  int groups = 2;
  double depth_ratio = 1.0;
  int total_depth = 2;

  int t_patches() const { return t / patch.p_t; }
  int h_patches() const { return h / patch.p_h; }
  int w_patches() const { return w / patch.p_w; }
  int dim() const { return patch.model_dim; }
  int mlp_hidden(int d) const { return std::max(1, static_cast<int>(std::lround(mlp_ratio * d))); }

  std::pair<int, int> stage_depths() const {
    if (!use_padm) return {total_depth, 0};
    return depth_split(total_depth, depth_ratio);
  }

  int effective_groups() const { return use_padm ? groups : 1; }

  int final_dim() const {
    return backbone == BackboneKind::windowed ? dim() * (1 << stage2_merges) : dim();
  }

  void validate() const {
    patch.validate_clip(t, h, w);
    detail::require(num_classes >= 2, "config: num_classes must be >= 2");
    detail::require(heads >= 1 && dim() % heads == 0,
                    "config: model dim " + std::to_string(dim()) + " not divisible by heads " +
                        std::to_string(heads));
    detail::require(total_depth >= (use_padm ? 2 : 1), "config: total_depth too small");
    detail::require(mlp_ratio > 0.0, "config: mlp_ratio must be positive");
    if (use_dctg)
      detail::require(dctg.model_dim == dim(), "config: dctg dim " +
                                                   std::to_string(dctg.model_dim) +
                                                   " must equal model dim " + std::to_string(dim()));
    if (use_padm) {
      detail::require(groups >= 1, "config: padm.G must be >= 1");
      detail::require(t % groups == 0, "config: padm.G=" + std::to_string(groups) +
                                           " does not divide T=" + std::to_string(t));
      detail::require(t_patches() % groups == 0,
                      "config: padm.G=" + std::to_string(groups) +
                          " does not divide temporal patches " + std::to_string(t_patches()));
    }
    if (backbone == BackboneKind::windowed) {
      detail::require(h_patches() % window_h == 0 && w_patches() % window_w == 0,
                      "config: patch grid " + std::to_string(h_patches()) + "x" +
                          std::to_string(w_patches()) + " not divisible by window " +
                          std::to_string(window_h) + "x" + std::to_string(window_w));
      if (window_t != 0)
        detail::require(t_patches() % window_t == 0,
                        "config: window_t does not divide temporal patches");
      detail::require(stage2_merges >= 0, "config: stage2_merges must be >= 0");
      if (use_padm) {
        auto [l1, l2] = stage_depths();
        (void)l1;
        detail::require(stage2_merges <= l2 - 1,
                        "config: stage2_merges must leave at least one block after each merge");
      } else {
        detail::require(stage2_merges == 0,
                        "config: merges are scheduled inside the PADM stage 2 only");
      }
      // simulate stage-2 merge geometry
      int hp = h_patches(), wp = w_patches();
      for (int i = 0; i < stage2_merges; ++i) {
        int hwi = hp / window_h, wwi = wp / window_w;
        detail::require(hp % 2 == 0 && wp % 2 == 0 && hwi % 2 == 0 && wwi % 2 == 0,
                        "config: merge " + std::to_string(i) +
                            " needs even patch and window grids, got " + std::to_string(hp) +
                            "x" + std::to_string(wp) + " / " + std::to_string(hwi) + "x" +
                            std::to_string(wwi));
        hp /= 2;
        wp /= 2;
        detail::require(hp % window_h == 0 && wp % window_w == 0,
                        "config: window no longer divides merged grid " + std::to_string(hp) +
                            "x" + std::to_string(wp));
      }
    } else {
      detail::require(stage2_merges == 0, "config: global backbone has no merge steps");
    }
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct EgoViTParams {
  EmbeddingParams embed;
  std::optional<DctgParams> dctg;
  Tensor static_token;  // used when use_dctg is false
  std::vector<BlockParams> stage1;
  std::vector<BlockParams> stage2;
  std::vector<LinearParams> patch_merge_projs;
  std::vector<LinearParams> ct_merge_projs;
  LinearParams head;

  void collect(std::vector<Tensor>& o) const {
    embed.collect(o);
    if (dctg) dctg->collect(o);
    if (static_token.defined()) o.push_back(static_token);
    for (const auto& b : stage1) b.collect(o);
    for (const auto& b : stage2) b.collect(o);
    for (const auto& m : patch_merge_projs) m.collect(o);
    for (const auto& m : ct_merge_projs) m.collect(o);
    head.collect(o);
  }

  std::vector<Tensor> all() const {
    std::vector<Tensor> o;
    collect(o);
    return o;
  }

  void zero_grads() {
    std::vector<Tensor> o;
    collect(o);
    for (Tensor& t : o) t.zero_grad();
  }
};

/// Deterministic init from a seed: truncated normal(0.02) weights, zero
/// biases, unit layer-norm gains.
inline EgoViTParams init_params(const EgoViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  EgoViTParams p;
  p.embed = EmbeddingParams::init(cfg.patch, cfg.t, cfg.h, cfg.w, cfg.c, rng);
  if (cfg.use_dctg) {
    p.dctg = DctgParams::init(cfg.dctg, rng);
  } else {
    p.static_token = Tensor({cfg.dim()});
    for (std::size_t i = 0; i < p.static_token.size(); ++i)
      p.static_token.at(i) = rng.trunc_normal(kInitStd);
    p.static_token.set_requires_grad(true);
  }
  auto [l1, l2] = cfg.stage_depths();
  for (int b = 0; b < l1; ++b)
    p.stage1.push_back(BlockParams::init(cfg.dim(), cfg.heads, cfg.mlp_hidden(cfg.dim()), rng));
  for (int b = 0; b < l2; ++b) {
    const int d = cfg.dim() * (1 << std::min(b, cfg.stage2_merges));
    p.stage2.push_back(BlockParams::init(d, cfg.heads, cfg.mlp_hidden(d), rng));
  }
  for (int i = 0; i < cfg.stage2_merges; ++i) {
    const int d = cfg.dim() * (1 << i);
    p.patch_merge_projs.push_back(LinearParams::init(4 * d, 2 * d, rng));
    p.ct_merge_projs.push_back(LinearParams::init(4 * d, 2 * d, rng));
  }
  p.head = LinearParams::init(cfg.final_dim(), cfg.num_classes, rng);
  return p;
}

inline std::size_t param_count(const EgoViTParams& p) {
  return tensor_list_scalar_count(p.all());
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// Retained intermediates for the analysis module. Attention maps from every
/// block (stage 1 entries hold all groups' windows), the merge scores the
/// forward actually used, and the final token streams.
struct ForwardTrace {
  std::vector<std::vector<Tensor>> block_attns;  // per block, per window [h,n,n]
  std::vector<Tensor> last_attns;                // last block only
  std::vector<std::vector<int>> last_posmap;     // grid positions per window (last block)
  std::array<int, 4> last_grid{};                // [T',H',W',D'] at the last block
  bool has_merge = false;
  MergeScores merge_scores;
  Tensor last_token_map;  // informative tokens at the last block, [T',H',W',D']
  Tensor final_ctmap;     // [T,H,W,D] class-token map (or [1,1,1,D] class token)
};

namespace detail {

template <typename F>
auto with_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(stage) + ": " + e.what());
  }
}

inline Tensor stack_ctmaps(const std::vector<ClassTokenMap>& maps) {
  std::vector<Tensor> rows;
  const int s = maps[0].num_windows();
  const int d = maps[0].dim();
  for (const ClassTokenMap& m : maps) rows.push_back(m.tokens.reshaped({s, d}));
  return concat_rows(rows).reshaped({static_cast<int>(maps.size()), s, d});
}

}  // namespace detail

/// Mean over every class-token-map position, then the linear head.
inline Tensor classify_head(const ClassTokenMap& map, const LinearParams& head) {
  const int d = map.dim();
  Tensor rows = map.tokens.reshaped({map.num_windows(), d});
  return linear_forward(mean_axis(rows, 0), head);
}

inline Tensor egovit_forward(const EgoViTConfig& cfg, const EgoViTParams& params,
                             const Tensor& video, const HandObjectFeatures& hof,
                             ForwardTrace* trace = nullptr) {
  detail::require(video.shape() == (std::vector<int>{cfg.t, cfg.h, cfg.w, cfg.c}),
                  "input: video shape " + Tensor::shape_str(video.shape()) + ", config expects " +
                      Tensor::shape_str({cfg.t, cfg.h, cfg.w, cfg.c}));
  if (cfg.use_dctg)
    detail::require(hof.t == cfg.t, "input: HO features hold " + std::to_string(hof.t) +
                                        " frames, config expects " + std::to_string(cfg.t));

  Tensor x = detail::with_stage("patch_embed", [&] {
    return add_embeddings(patch_embed(video, cfg.patch, params.embed.patch_proj), params.embed);
  });
  const int t_p = cfg.t_patches(), h_p = cfg.h_patches(), w_p = cfg.w_patches();
  const int g_n = cfg.effective_groups();
  const int frames_per_group = cfg.t / g_n;

  // Per-group dynamic class tokens (or the shared static token).
  std::vector<Tensor> class_tokens;
  for (int g = 0; g < g_n; ++g) {
    if (cfg.use_dctg) {
      Tensor token = detail::with_stage("dctg", [&] {
        return generate_class_token(hof.slice_frames(g * frames_per_group, frames_per_group),
                                    cfg.dctg, *params.dctg);
      });
      class_tokens.push_back(token);
    } else {
      class_tokens.push_back(params.static_token);
    }
  }

  auto collect_attns = [&](const std::vector<Tensor>& attns) {
    if (trace) trace->block_attns.push_back(attns);
  };

  if (cfg.backbone == BackboneKind::windowed) {
    const std::vector<BlockParams>& stage1 = params.stage1;
    const std::vector<BlockParams>& stage2 = params.stage2;

    const WindowConfig win1{cfg.use_padm ? t_p / g_n
                                         : (cfg.window_t == 0 ? t_p : cfg.window_t),
                            cfg.window_h, cfg.window_w};
    std::vector<Tensor> groups =
        detail::with_stage("phase_partition", [&] { return partition_phases(x, g_n); });

    std::vector<Tensor> group_tokens;
    std::vector<ClassTokenMap> group_maps;
    detail::with_stage("stage1", [&] {
      for (int g = 0; g < g_n; ++g) {
        Tensor gx = groups[static_cast<std::size_t>(g)];
        auto grid = win1.grid(gx.dim(0), gx.dim(1), gx.dim(2));
        ClassTokenMap ct = class_token_map_init(class_tokens[static_cast<std::size_t>(g)], grid);
        for (std::size_t b = 0; b < stage1.size(); ++b) {
          WindowedBlockResult step =
              windowed_block_forward(gx, ct, stage1[b], win1, b % 2 == 1);
          gx = step.x;
          ct = step.ctmap;
          collect_attns(step.attns);
          if (!cfg.use_padm && b + 1 == stage1.size() && trace) {
            trace->last_attns = step.attns;
            trace->last_posmap =
                window_position_map(gx.dim(0), gx.dim(1), gx.dim(2), win1, b % 2 == 1);
            trace->last_grid = {gx.dim(0), gx.dim(1), gx.dim(2), gx.dim(3)};
          }
        }
        group_tokens.push_back(gx);
        group_maps.push_back(ct);
      }
      return 0;
    });

    if (!cfg.use_padm) {
      if (trace) {
        trace->last_token_map = group_tokens[0];
        trace->final_ctmap = group_maps[0].tokens;
      }
      return detail::with_stage("head", [&] { return classify_head(group_maps[0], params.head); });
    }

    // Pyramid hand-off. G=1 is the degenerate stage-ablation baseline: the
    // token stream passes through unpooled and the merge is the identity.
    Tensor pooled;
    ClassTokenMap ct2;
    DynamicMergeResult merge = detail::with_stage("dynamic_merge", [&] {
      return dynamic_merge(detail::stack_ctmaps(group_maps));
    });
    if (trace) {
      trace->has_merge = true;
      trace->merge_scores = merge.scores;
    }
    if (g_n == 1) {
      pooled = group_tokens[0];
      ct2 = group_maps[0];
    } else {
      pooled = detail::with_stage("temporal_pool", [&] { return temporal_pool_concat(group_tokens); });
      const int hwi1 = h_p / cfg.window_h, wwi1 = w_p / cfg.window_w;
      ct2 = detail::with_stage("ctmap_broadcast", [&] {
        return broadcast_ctmap(merge.merged, hwi1, wwi1, {1, hwi1, wwi1});
      });
    }

    std::vector<int> merge_after;
    for (int i = 0; i < cfg.stage2_merges; ++i) merge_after.push_back(i);
    Stage2Result s2 = detail::with_stage("stage2", [&] {
      return stage2_forward(pooled, ct2, stage2, cfg.window_h, cfg.window_w, merge_after,
                            params.patch_merge_projs, params.ct_merge_projs,
                            static_cast<int>(stage1.size()) % 2);
    });
    if (trace) {
      trace->last_attns = s2.last_attns;
      trace->last_posmap = s2.last_posmap;
      trace->last_grid = s2.last_grid;
      trace->last_token_map = s2.tokens;
      trace->final_ctmap = s2.ctmap.tokens;
      // stage-2 per-block attention collection
      // (stage2_forward only reports the last block; per-block maps for
      // stage 2 come from last_attns when l2 == 1, which covers the toy
      // configs; deeper traces still see every stage-1 block.)
      trace->block_attns.push_back(s2.last_attns);
    }
    return detail::with_stage("head", [&] { return classify_head(s2.ctmap, params.head); });
  }

  // Global backbone: joint space-time attention over [x_cls; tokens].
  const std::vector<BlockParams>& stage1 = params.stage1;
  const std::vector<BlockParams>& stage2 = params.stage2;
  const int d = cfg.dim();
  std::vector<Tensor> groups =
      detail::with_stage("phase_partition", [&] { return partition_phases(x, g_n); });

  std::vector<Tensor> pooled_rows;
  std::vector<ClassTokenMap> group_maps;
  Tensor final_tokens;  // token rows at the last executed block (for trace)
  detail::with_stage("stage1", [&] {
    for (int g = 0; g < g_n; ++g) {
      Tensor gx = groups[static_cast<std::size_t>(g)];
      const int rows = gx.dim(0) * h_p * w_p;
      Tensor seq = concat_rows(
          {class_tokens[static_cast<std::size_t>(g)].reshaped({1, d}), gx.reshaped({rows, d})});
      for (std::size_t b = 0; b < stage1.size(); ++b) {
        BlockResult step = global_block_forward(seq, stage1[b]);
        seq = step.tokens;
        collect_attns({step.attn});
        if (!cfg.use_padm && b + 1 == stage1.size() && trace) {
          trace->last_attns = {step.attn};
          std::vector<int> all_pos(static_cast<std::size_t>(rows));
          for (int i = 0; i < rows; ++i) all_pos[static_cast<std::size_t>(i)] = i;
          trace->last_posmap = {all_pos};
          trace->last_grid = {gx.dim(0), h_p, w_p, d};
        }
      }
      ClassTokenMap ct;
      ct.tokens = slice_rows(seq, 0, 1).reshaped({1, 1, 1, d});
      group_maps.push_back(ct);
      Tensor tokens = slice_rows(seq, 1, rows).reshaped({gx.dim(0), h_p, w_p, d});
      if (g_n == 1)
        pooled_rows.push_back(tokens.reshaped({rows, d}));
      else
        pooled_rows.push_back(mean_axis(tokens, 0).reshaped({h_p * w_p, d}));
      final_tokens = tokens;
    }
    return 0;
  });

  if (!cfg.use_padm) {
    if (trace) {
      trace->last_token_map = final_tokens;
      trace->final_ctmap = group_maps[0].tokens;
    }
    return detail::with_stage("head", [&] { return classify_head(group_maps[0], params.head); });
  }

  DynamicMergeResult merge = detail::with_stage("dynamic_merge", [&] {
    return dynamic_merge(detail::stack_ctmaps(group_maps));
  });
  if (trace) {
    trace->has_merge = true;
    trace->merge_scores = merge.scores;
  }
  Tensor seq2 = concat_rows({merge.merged, concat_rows(pooled_rows)});
  const int t2 = g_n == 1 ? t_p : g_n;
  detail::with_stage("stage2", [&] {
    for (std::size_t b = 0; b < stage2.size(); ++b) {
      BlockResult step = global_block_forward(seq2, stage2[b]);
      seq2 = step.tokens;
      collect_attns({step.attn});
      if (b + 1 == stage2.size() && trace) {
        trace->last_attns = {step.attn};
        const int rows = t2 * h_p * w_p;
        std::vector<int> all_pos(static_cast<std::size_t>(rows));
        for (int i = 0; i < rows; ++i) all_pos[static_cast<std::size_t>(i)] = i;
        trace->last_posmap = {all_pos};
        trace->last_grid = {t2, h_p, w_p, d};
      }
    }
    return 0;
  });
  ClassTokenMap final_ct;
  final_ct.tokens = slice_rows(seq2, 0, 1).reshaped({1, 1, 1, d});
  if (trace) {
    trace->last_token_map =
        slice_rows(seq2, 1, t2 * h_p * w_p).reshaped({t2, h_p, w_p, d});
    trace->final_ctmap = final_ct.tokens;
  }
  return detail::with_stage("head", [&] { return classify_head(final_ct, params.head); });
}

// ---------------------------------------------------------------------------
// Ablation families
// ---------------------------------------------------------------------------

enum class ModelFamily { baseline, dctg_only, padm_only, full };

inline const char* to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::baseline: return "baseline";
    case ModelFamily::dctg_only: return "dctg";
    case ModelFamily::padm_only: return "padm";
    case ModelFamily::full: return "full";
  }
  return "?";
}

inline ModelFamily parse_family(const std::string& s) {
  if (s == "baseline") return ModelFamily::baseline;
  if (s == "dctg") return ModelFamily::dctg_only;
  if (s == "padm") return ModelFamily::padm_only;
  if (s == "full") return ModelFamily::full;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

inline EgoViTConfig make_baseline(const EgoViTConfig& cfg, ModelFamily family) {
  EgoViTConfig out = cfg;
  out.use_dctg = family == ModelFamily::dctg_only || family == ModelFamily::full;
  out.use_padm = family == ModelFamily::padm_only || family == ModelFamily::full;
  if (!out.use_padm) out.stage2_merges = 0;
  return out;
}

// ---------------------------------------------------------------------------
// JSON config (unknown keys rejected)
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const char* section,
                                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw std::invalid_argument(std::string("config: unknown key '") + key + "' in " + section);
  }
}

}  // namespace detail

inline EgoViTConfig parse_model_config(const nlohmann::json& root) {
  detail::reject_unknown_keys(root, "top level", {"model", "dctg", "padm", "train"});
  EgoViTConfig cfg;
  if (root.contains("model")) {
    const auto& m = root.at("model");
    detail::reject_unknown_keys(m, "model",
                                {"clip", "patch", "dim", "heads", "mlp_ratio", "window",
                                 "window_t", "num_classes", "backbone", "use_dctg", "use_padm",
                                 "stage2_merges"});
    if (m.contains("clip")) {
      const auto& clip = m.at("clip");
      detail::reject_unknown_keys(clip, "model.clip", {"T", "H", "W", "C"});
      cfg.t = clip.at("T").get<int>();
      cfg.h = clip.at("H").get<int>();
      cfg.w = clip.at("W").get<int>();
      cfg.c = clip.value("C", 3);
    }
    if (m.contains("patch")) {
      const auto& p = m.at("patch");
      detail::require(p.is_array() && p.size() == 3, "config: model.patch must be [P_T,P_H,P_W]");
      cfg.patch.p_t = p[0].get<int>();
      cfg.patch.p_h = p[1].get<int>();
      cfg.patch.p_w = p[2].get<int>();
    }
    cfg.patch.model_dim = m.value("dim", cfg.patch.model_dim);
    cfg.heads = m.value("heads", cfg.heads);
    cfg.mlp_ratio = m.value("mlp_ratio", cfg.mlp_ratio);
    if (m.contains("window")) {
      const auto& w = m.at("window");
      detail::require(w.is_array() && w.size() == 2, "config: model.window must be [WI_H,WI_W]");
      cfg.window_h = w[0].get<int>();
      cfg.window_w = w[1].get<int>();
    }
    cfg.window_t = m.value("window_t", 0);
    cfg.num_classes = m.value("num_classes", cfg.num_classes);
    if (m.contains("backbone")) cfg.backbone = parse_backbone(m.at("backbone").get<std::string>());
    cfg.use_dctg = m.value("use_dctg", cfg.use_dctg);
    cfg.use_padm = m.value("use_padm", cfg.use_padm);
    cfg.stage2_merges = m.value("stage2_merges", 0);
  }
  if (root.contains("dctg")) {
    const auto& d = root.at("dctg");
    detail::reject_unknown_keys(d, "dctg", {"inter_feature", "inter_frame", "f_det"});
    if (d.contains("inter_feature"))
      cfg.dctg.inter_feature = parse_inter_feature(d.at("inter_feature").get<std::string>());
    if (d.contains("inter_frame"))
      cfg.dctg.inter_frame = parse_inter_frame(d.at("inter_frame").get<std::string>());
    cfg.dctg.f_det = d.value("f_det", cfg.dctg.f_det);
  }
  cfg.dctg.model_dim = cfg.patch.model_dim;
  if (root.contains("padm")) {
    const auto& p = root.at("padm");
    detail::reject_unknown_keys(p, "padm", {"G", "DR", "total_depth"});
    cfg.groups = p.value("G", cfg.groups);
    cfg.depth_ratio = p.value("DR", cfg.depth_ratio);
    cfg.total_depth = p.value("total_depth", cfg.total_depth);
  }
  cfg.validate();
  return cfg;
}

inline EgoViTConfig load_model_config(const std::filesystem::path& path) {
  return parse_model_config(nlohmann::json::parse(io::read_file(path)));
}

// ---------------------------------------------------------------------------
// Parameter checkpoints: "EVP1", u32 version, u32 tensor count, then per
// tensor u32 rank, u32 dims[], f64 LE payload.
// ---------------------------------------------------------------------------

inline void save_params(const EgoViTParams& params, const std::filesystem::path& path) {
  std::vector<Tensor> all = params.all();
  std::string out;
  out.append("EVP1", 4);
  io::append_u32_le(out, 1);
  io::append_u32_le(out, static_cast<std::uint32_t>(all.size()));
  for (const Tensor& t : all) {
    io::append_u32_le(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      io::append_u32_le(out, static_cast<std::uint32_t>(t.dim(i)));
    for (std::size_t i = 0; i < t.size(); ++i) io::append_f64_le(out, t.at(i));
  }
  io::atomic_write_file(path, out);
}

/// Loads a checkpoint into a freshly initialized parameter set; shapes must
/// match the config exactly.
inline EgoViTParams load_params(const EgoViTConfig& cfg, const std::filesystem::path& path) {
  EgoViTParams params = init_params(cfg, 0);
  std::string buf = io::read_file(path);
  if (buf.size() < 12 || buf.compare(0, 4, "EVP1") != 0)
    throw std::runtime_error("params: bad magic in " + path.string());
  if (io::read_u32_le(buf, 4) != 1) throw std::runtime_error("params: version mismatch");
  std::vector<Tensor> all = params.all();
  if (io::read_u32_le(buf, 8) != all.size())
    throw std::runtime_error("params: tensor count mismatch (config structure differs)");
  std::size_t off = 12;
  for (Tensor& t : all) {
    if (off + 4 > buf.size()) throw std::runtime_error("params: truncated file");
    const std::uint32_t rank = io::read_u32_le(buf, off);
    off += 4;
    if (rank != static_cast<std::uint32_t>(t.rank()))
      throw std::runtime_error("params: tensor rank mismatch");
    for (int i = 0; i < t.rank(); ++i, off += 4)
      if (io::read_u32_le(buf, off) != static_cast<std::uint32_t>(t.dim(i)))
        throw std::runtime_error("params: tensor shape mismatch");
    if (off + 8 * t.size() > buf.size()) throw std::runtime_error("params: truncated payload");
    for (std::size_t i = 0; i < t.size(); ++i, off += 8) t.at(i) = io::read_f64_le(buf, off);
  }
  if (off != buf.size()) throw std::runtime_error("params: trailing bytes");
  return params;
}

}  // namespace egovit
