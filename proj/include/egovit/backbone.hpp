#pragma once

#include <array>
#include <vector>

#include "egovit/nn.hpp"

namespace egovit {

// ---------------------------------------------------------------------------
// Patch embedding (video -> token grid)
// ---------------------------------------------------------------------------

struct PatchConfig {
  int p_t = 2, p_h = 4, p_w = 4;
  int model_dim = 16;

  void validate_clip(int t, int h, int w) const {
    detail::require(p_t >= 1 && p_h >= 1 && p_w >= 1, "PatchConfig: patch dims must be positive");
    detail::require(t % p_t == 0 && h % p_h == 0 && w % p_w == 0,
                    "PatchConfig: clip " + std::to_string(t) + "x" + std::to_string(h) + "x" +
                        std::to_string(w) + " not divisible by patch " + std::to_string(p_t) +
                        "x" + std::to_string(p_h) + "x" + std::to_string(p_w));
  }
};

struct EmbeddingParams {
  LinearParams patch_proj;  // [P_T*P_H*P_W*C, D]
  Tensor x_pos;             // [H_P, W_P, D]
  Tensor x_temp;            // [T_P, D]

  static EmbeddingParams init(const PatchConfig& patch, int t, int h, int w, int c, Rng& rng) {
    patch.validate_clip(t, h, w);
    EmbeddingParams p;
    p.patch_proj = LinearParams::init(patch.p_t * patch.p_h * patch.p_w * c, patch.model_dim, rng);
    p.x_pos = Tensor({h / patch.p_h, w / patch.p_w, patch.model_dim});
    p.x_temp = Tensor({t / patch.p_t, patch.model_dim});
    for (std::size_t i = 0; i < p.x_pos.size(); ++i) p.x_pos.at(i) = rng.trunc_normal(kInitStd);
    for (std::size_t i = 0; i < p.x_temp.size(); ++i) p.x_temp.at(i) = rng.trunc_normal(kInitStd);
    p.x_pos.set_requires_grad(true);
    p.x_temp.set_requires_grad(true);
    return p;
  }

  void collect(std::vector<Tensor>& o) const {
    patch_proj.collect(o);
    o.push_back(x_pos);
    o.push_back(x_temp);
  }
};

/// Flattens non-overlapping P_T x P_H x P_W patches and projects each to D.
inline Tensor patch_embed(const Tensor& clip, const PatchConfig& cfg,
                          const LinearParams& proj) {
  detail::require(clip.rank() == 4, "patch_embed: clip must be [T,H,W,C]");
  const int t = clip.dim(0), h = clip.dim(1), w = clip.dim(2), c = clip.dim(3);
  cfg.validate_clip(t, h, w);
  const int tp = t / cfg.p_t, hp = h / cfg.p_h, wp = w / cfg.p_w;
  const int patch_len = cfg.p_t * cfg.p_h * cfg.p_w;
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(tp) * hp * wp * patch_len);
  for (int pt = 0; pt < tp; ++pt)
    for (int ph = 0; ph < hp; ++ph)
      for (int pw = 0; pw < wp; ++pw)
        for (int dt = 0; dt < cfg.p_t; ++dt)
          for (int dh = 0; dh < cfg.p_h; ++dh)
            for (int dw = 0; dw < cfg.p_w; ++dw)
              idx.push_back(((pt * cfg.p_t + dt) * h + ph * cfg.p_h + dh) * w + pw * cfg.p_w + dw);
  Tensor flat = gather_rows(clip, c, idx).reshaped({tp * hp * wp, patch_len * c});
  return linear_forward(flat, proj).reshaped({tp, hp, wp, cfg.model_dim});
}

/// Adds the temporal bias over (a,b) and the position bias over t (Eq-style
/// broadcast sum of learned embeddings).
inline Tensor add_embeddings(const Tensor& x, const EmbeddingParams& p) {
  detail::require(x.rank() == 4, "add_embeddings: token grid must be [T_P,H_P,W_P,D]");
  const int tp = x.dim(0), hp = x.dim(1), wp = x.dim(2), d = x.dim(3);
  detail::require(p.x_temp.shape() == (std::vector<int>{tp, d}),
                  "add_embeddings: x_temp shape mismatch");
  detail::require(p.x_pos.shape() == (std::vector<int>{hp, wp, d}),
                  "add_embeddings: x_pos shape mismatch");
  std::vector<int> t_idx, pos_idx;
  t_idx.reserve(static_cast<std::size_t>(tp) * hp * wp);
  pos_idx.reserve(t_idx.capacity());
  for (int t = 0; t < tp; ++t)
    for (int a = 0; a < hp; ++a)
      for (int b = 0; b < wp; ++b) {
        t_idx.push_back(t);
        pos_idx.push_back(a * wp + b);
      }
  Tensor temp_b = gather_rows(p.x_temp, d, t_idx).reshaped(x.shape());
  Tensor pos_b = gather_rows(p.x_pos, d, pos_idx).reshaped(x.shape());
  return add(add(x, temp_b), pos_b);
}

// ---------------------------------------------------------------------------
// Global (joint space-time) class-token block
// ---------------------------------------------------------------------------

/// Pre-norm block over [x_cls; patch tokens]; row 0 is the class token.
inline BlockResult global_block_forward(const Tensor& tokens, const BlockParams& p) {
  detail::require(tokens.rank() == 2 && tokens.dim(0) >= 1,
                  "global_block_forward: tokens must be [1+N, D]");
  return block_forward(tokens, p);
}

// ---------------------------------------------------------------------------
// 3D windows
// ---------------------------------------------------------------------------

struct WindowConfig {
  int wt = 1, wh = 2, ww = 2;  // window extents in patches

  std::array<int, 3> grid(int t, int h, int w) const {
    detail::require(wt >= 1 && wh >= 1 && ww >= 1, "WindowConfig: extents must be positive");
    detail::require(t % wt == 0 && h % wh == 0 && w % ww == 0,
                    "WindowConfig: grid " + std::to_string(t) + "x" + std::to_string(h) + "x" +
                        std::to_string(w) + " not divisible by window " + std::to_string(wt) +
                        "x" + std::to_string(wh) + "x" + std::to_string(ww));
    return {t / wt, h / wh, w / ww};
  }

  int tokens_per_window() const { return wt * wh * ww; }
};

/// Flattened grid positions covered by each window, in row-major window order
/// with row-major members. The shifted variant rolls the grid by half a
/// window along every axis that holds more than one window; positions are
/// reported in original coordinates, so partition-attend-scatter needs no
/// separate roll op.
inline std::vector<std::vector<int>> window_position_map(int t, int h, int w,
                                                         const WindowConfig& win,
                                                         bool shifted) {
  auto grid = win.grid(t, h, w);
  const int st = (shifted && grid[0] > 1) ? win.wt / 2 : 0;
  const int sh = (shifted && grid[1] > 1) ? win.wh / 2 : 0;
  const int sw = (shifted && grid[2] > 1) ? win.ww / 2 : 0;
  std::vector<std::vector<int>> maps;
  maps.reserve(static_cast<std::size_t>(grid[0]) * grid[1] * grid[2]);
  for (int gt = 0; gt < grid[0]; ++gt)
    for (int gh = 0; gh < grid[1]; ++gh)
      for (int gw = 0; gw < grid[2]; ++gw) {
        std::vector<int> members;
        members.reserve(static_cast<std::size_t>(win.tokens_per_window()));
        for (int dt = 0; dt < win.wt; ++dt)
          for (int dh = 0; dh < win.wh; ++dh)
            for (int dw = 0; dw < win.ww; ++dw) {
              const int qt = (gt * win.wt + dt + st) % t;
              const int qh = (gh * win.wh + dh + sh) % h;
              const int qw = (gw * win.ww + dw + sw) % w;
              members.push_back((qt * h + qh) * w + qw);
            }
        maps.push_back(std::move(members));
      }
  return maps;
}

/// Splits a token grid into disjoint covering window tensors [wt*wh*ww, D].
inline std::vector<Tensor> window_partition(const Tensor& x, const WindowConfig& win,
                                            bool shifted) {
  detail::require(x.rank() == 4, "window_partition: token grid must be [T,H,W,D]");
  const int d = x.dim(3);
  auto maps = window_position_map(x.dim(0), x.dim(1), x.dim(2), win, shifted);
  std::vector<Tensor> windows;
  windows.reserve(maps.size());
  for (const auto& m : maps) windows.push_back(gather_rows(x, d, m));
  return windows;
}

// ---------------------------------------------------------------------------
// Class token map
// ---------------------------------------------------------------------------

/// One dynamic class token per attention window at the current resolution.
struct ClassTokenMap {
  Tensor tokens;  // [T_WI, H_WI, W_WI, D]

  int num_windows() const { return tokens.dim(0) * tokens.dim(1) * tokens.dim(2); }
  int dim() const { return tokens.dim(3); }
};

/// Every window starts from the same dynamic class token.
inline ClassTokenMap class_token_map_init(const Tensor& x_cls,
                                          const std::array<int, 3>& window_grid) {
  detail::require(x_cls.rank() == 1, "class_token_map_init: token must be [D]");
  const int d = x_cls.dim(0);
  const int n = window_grid[0] * window_grid[1] * window_grid[2];
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  ClassTokenMap map;
  map.tokens = gather_rows(x_cls.reshaped({1, d}), d, idx)
                   .reshaped({window_grid[0], window_grid[1], window_grid[2], d});
  return map;
}

// ---------------------------------------------------------------------------
// Windowed blocks with per-window class tokens (the four-line W-MSA / MLP /
// SW-MSA / MLP scheme, one half per call)
// ---------------------------------------------------------------------------

struct WindowedBlockResult {
  Tensor x;                  // token grid, same shape as input
  ClassTokenMap ctmap;       // updated class tokens
  std::vector<Tensor> attns; // per-window [h, 1+n, 1+n]
};

/// One attention+MLP half over every window: each window's class token is
/// prepended, the pre-norm block runs, and the updated token is written back
/// to the map. Class tokens stay bound to their window index; only grid
/// tokens take part in the cyclic shift.
inline WindowedBlockResult windowed_block_forward(const Tensor& x, const ClassTokenMap& ct,
                                                  const BlockParams& p, const WindowConfig& win,
                                                  bool shifted) {
  detail::require(x.rank() == 4, "windowed_block_forward: token grid must be [T,H,W,D]");
  const int t = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  auto grid = win.grid(t, h, w);
  detail::require(ct.tokens.shape() == (std::vector<int>{grid[0], grid[1], grid[2], d}),
                  "windowed_block_forward: class token map " +
                      Tensor::shape_str(ct.tokens.shape()) + " does not match window grid " +
                      std::to_string(grid[0]) + "x" + std::to_string(grid[1]) + "x" +
                      std::to_string(grid[2]) + " at D=" + std::to_string(d));
  auto maps = window_position_map(t, h, w, win, shifted);
  const int n = win.tokens_per_window();
  Tensor ct_rows = ct.tokens.reshaped({static_cast<int>(maps.size()), d});

  WindowedBlockResult r;
  std::vector<Tensor> new_tokens, new_cts;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    Tensor seq = concat_rows({slice_rows(ct_rows, static_cast<int>(i), 1),
                              gather_rows(x, d, maps[i])});
    BlockResult b = block_forward(seq, p);
    new_cts.push_back(slice_rows(b.tokens, 0, 1));
    new_tokens.push_back(slice_rows(b.tokens, 1, n));
    r.attns.push_back(b.attn);
  }
  // Scatter window tokens back to their grid positions.
  std::vector<int> inverse(static_cast<std::size_t>(t) * h * w);
  for (std::size_t i = 0; i < maps.size(); ++i)
    for (int j = 0; j < n; ++j)
      inverse[static_cast<std::size_t>(maps[i][static_cast<std::size_t>(j)])] =
          static_cast<int>(i) * n + j;
  r.x = gather_rows(concat_rows(new_tokens), d, inverse).reshaped(x.shape());
  r.ctmap.tokens = concat_rows(new_cts).reshaped(ct.tokens.shape());
  return r;
}

/// W-MSA half then SW-MSA half (Eq-5 block pair).
inline WindowedBlockResult windowed_block_pair(const Tensor& x, const ClassTokenMap& ct,
                                               const BlockParams& p_w, const BlockParams& p_sw,
                                               const WindowConfig& win) {
  WindowedBlockResult first = windowed_block_forward(x, ct, p_w, win, false);
  WindowedBlockResult second =
      windowed_block_forward(first.x, first.ctmap, p_sw, win, true);
  return second;
}

// ---------------------------------------------------------------------------
// Spatial 2x2 merging (shared by patch tokens and the class token map)
// ---------------------------------------------------------------------------

/// Concatenates each 2x2 spatial neighborhood in fixed row-major order
/// ((0,0),(0,1),(1,0),(1,1)) and projects 4D -> 2D, halving H,W and doubling
/// the channel dim.
inline Tensor merge_spatial_2x2(const Tensor& x, const LinearParams& proj) {
  detail::require(x.rank() == 4, "merge_spatial_2x2: input must be [T,H,W,D]");
  const int t = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  detail::require(h % 2 == 0 && w % 2 == 0,
                  "merge_spatial_2x2: H and W must be even, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  detail::require(proj.in_dim() == 4 * d && proj.out_dim() == 2 * d,
                  "merge_spatial_2x2: projection must be [4D,2D] for D=" + std::to_string(d));
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(t) * h * w);
  for (int ti = 0; ti < t; ++ti)
    for (int hi = 0; hi < h / 2; ++hi)
      for (int wi = 0; wi < w / 2; ++wi)
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc)
            idx.push_back((ti * h + 2 * hi + dr) * w + 2 * wi + dc);
  Tensor grouped = gather_rows(x, d, idx).reshaped({t * (h / 2) * (w / 2), 4 * d});
  return linear_forward(grouped, proj).reshaped({t, h / 2, w / 2, 2 * d});
}

inline Tensor patch_merge(const Tensor& x, const LinearParams& proj) {
  return merge_spatial_2x2(x, proj);
}

inline ClassTokenMap class_token_map_merge(const ClassTokenMap& ct, const LinearParams& proj) {
  ClassTokenMap out;
  out.tokens = merge_spatial_2x2(ct.tokens, proj);
  return out;
}

}  // namespace egovit
