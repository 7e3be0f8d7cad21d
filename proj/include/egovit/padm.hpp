#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "egovit/backbone.hpp"

namespace egovit {

constexpr double kMergeNormFloor = 1e-8;  // guards zero-norm class tokens

struct PhaseConfig {
  int groups = 2;           // G
  double depth_ratio = 2.0; // DR = stage1 depth / stage2 depth
  int l1 = 1, l2 = 1;

  void validate_temporal(int t_p) const {
    detail::require(groups >= 1, "PhaseConfig: G must be >= 1");
    detail::require(t_p % groups == 0, "PhaseConfig: G=" + std::to_string(groups) +
                                           " does not divide temporal extent " +
                                           std::to_string(t_p));
  }
};

/// Splits a block budget by the depth ratio: L1 = round(total*DR/(1+DR)),
/// half-up, clamped so both stages keep at least one block.
inline std::pair<int, int> depth_split(int total_depth, double depth_ratio) {
  detail::require(total_depth >= 2, "depth_split: total depth must be >= 2");
  detail::require(depth_ratio > 0.0, "depth_split: depth ratio must be positive");
  int l1 = static_cast<int>(std::floor(static_cast<double>(total_depth) * depth_ratio /
                                           (1.0 + depth_ratio) + 0.5));
  l1 = std::min(std::max(l1, 1), total_depth - 1);
  return {l1, total_depth - l1};
}

/// Consecutive order-preserving split of the temporal axis into G groups.
inline std::vector<Tensor> partition_phases(const Tensor& x, int groups) {
  detail::require(x.rank() == 4, "partition_phases: token grid must be [T_P,H,W,D]");
  const int t = x.dim(0);
  detail::require(groups >= 1 && t % groups == 0,
                  "partition_phases: G=" + std::to_string(groups) + " does not divide T_P=" +
                      std::to_string(t));
  const int per = t / groups;
  const int row = x.dim(1) * x.dim(2) * x.dim(3);
  Tensor rows = x.reshaped({t, row});
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g)
    out.push_back(slice_rows(rows, g * per, per).reshaped({per, x.dim(1), x.dim(2), x.dim(3)}));
  return out;
}

// ---------------------------------------------------------------------------
// Stage 1: shared-weight per-phase windowed blocks
// ---------------------------------------------------------------------------

struct Stage1Result {
  std::vector<Tensor> tokens;         // per group, [t_g,H,W,D]
  std::vector<ClassTokenMap> ctmaps;  // per group
};

/// Runs the same block stack over every group (weights shared), each group
/// seeded with its own dynamic class token. Blocks alternate W-MSA / SW-MSA
/// starting unshifted.
inline Stage1Result stage1_forward(const std::vector<Tensor>& groups,
                                   const std::vector<Tensor>& class_tokens,
                                   const std::vector<BlockParams>& blocks,
                                   const WindowConfig& win) {
  detail::require(!groups.empty() && groups.size() == class_tokens.size(),
                  "stage1_forward: one class token per group required");
  Stage1Result r;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Tensor& x0 = groups[g];
    auto grid = win.grid(x0.dim(0), x0.dim(1), x0.dim(2));
    Tensor x = x0;
    ClassTokenMap ct = class_token_map_init(class_tokens[g], grid);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      WindowedBlockResult step = windowed_block_forward(x, ct, blocks[b], win, b % 2 == 1);
      x = step.x;
      ct = step.ctmap;
    }
    r.tokens.push_back(x);
    r.ctmaps.push_back(ct);
  }
  return r;
}

/// Per-group temporal mean, stacked along a new temporal axis of length G.
inline Tensor temporal_pool_concat(const std::vector<Tensor>& group_tokens) {
  detail::require(!group_tokens.empty(), "temporal_pool_concat: no groups");
  const int h = group_tokens[0].dim(1), w = group_tokens[0].dim(2), d = group_tokens[0].dim(3);
  std::vector<Tensor> pooled;
  for (const Tensor& g : group_tokens) {
    detail::require(g.rank() == 4 && g.dim(1) == h && g.dim(2) == w && g.dim(3) == d,
                    "temporal_pool_concat: inconsistent group shapes");
    pooled.push_back(mean_axis(g, 0).reshaped({1, h * w * d}));
  }
  return concat_rows(pooled).reshaped({static_cast<int>(group_tokens.size()), h, w, d});
}

// ---------------------------------------------------------------------------
// Dynamic merging of per-phase class tokens
// ---------------------------------------------------------------------------

struct MergeScores {
  Tensor alpha;    // [G,S] raw scores (zero for G=1)
  Tensor weights;  // [G,S], softmax over the group axis; columns sum to 1
};

struct DynamicMergeResult {
  Tensor merged;  // [S,D]
  MergeScores scores;
};

/// Cosine-similarity scoring of phase class tokens followed by a per-position
/// softmax over groups and a weighted sum:
///   alpha[g,s] = (1/||x_gs||) * sum_{g'!=g} sum_{s'} x_gs . x_g's' / ||x_g's'||
/// Norms are clamped to kMergeNormFloor. G=1 degenerates to the identity with
/// weight 1 (the stage-ablation baseline).
inline DynamicMergeResult dynamic_merge(const Tensor& ctmaps, double eps = kMergeNormFloor) {
  detail::require(ctmaps.rank() == 3, "dynamic_merge: input must be [G,S,D]");
  const int g_n = ctmaps.dim(0), s_n = ctmaps.dim(1), d = ctmaps.dim(2);
  DynamicMergeResult r;
  if (g_n == 1) {
    r.merged = ctmaps.reshaped({s_n, d});
    r.scores.alpha = Tensor({1, s_n});
    r.scores.weights = Tensor::full({1, s_n}, 1.0);
    return r;
  }
  Tensor rows = ctmaps.reshaped({g_n * s_n, d});
  Tensor unit = normalize_rows(rows, eps);                 // x/||x||, row-wise
  Tensor per_group = sum_axis(unit.reshaped({g_n, s_n, d}), 1);  // u_g = sum_s' v_gs'
  Tensor total = sum_axis(per_group, 0).reshaped({1, d});        // U = sum_g u_g
  std::vector<int> zeros(static_cast<std::size_t>(g_n), 0);
  Tensor others = sub(gather_rows(total, d, zeros), per_group);  // U - u_g
  std::vector<int> group_of_row(static_cast<std::size_t>(g_n) * s_n);
  for (int g = 0; g < g_n; ++g)
    for (int s = 0; s < s_n; ++s) group_of_row[static_cast<std::size_t>(g) * s_n + s] = g;
  Tensor alpha = rowwise_dot(unit, gather_rows(others, d, group_of_row)).reshaped({g_n, s_n});
  Tensor weights = softmax(alpha, 0);
  Tensor contrib = scale_rows(rows, weights.reshaped({g_n * s_n}));
  r.merged = sum_axis(contrib.reshaped({g_n, s_n, d}), 0).reshaped({s_n, d});
  r.scores.alpha = alpha;
  r.scores.weights = weights;
  return r;
}

/// Replicates a merged class-token map [S,D] over a (possibly finer) stage-2
/// window grid; identical grids copy through.
inline ClassTokenMap broadcast_ctmap(const Tensor& merged, int h1, int w1,
                                     const std::array<int, 3>& target_grid) {
  detail::require(merged.rank() == 2 && merged.dim(0) == h1 * w1,
                  "broadcast_ctmap: merged map is not " + std::to_string(h1) + "x" +
                      std::to_string(w1));
  const int d = merged.dim(1);
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(target_grid[0]) * target_grid[1] * target_grid[2]);
  for (int t = 0; t < target_grid[0]; ++t)
    for (int h = 0; h < target_grid[1]; ++h)
      for (int w = 0; w < target_grid[2]; ++w)
        idx.push_back((h * h1 / target_grid[1]) * w1 + (w * w1 / target_grid[2]));
  ClassTokenMap out;
  out.tokens = gather_rows(merged, d, idx)
                   .reshaped({target_grid[0], target_grid[1], target_grid[2], d});
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: global-temporal windowed blocks with scheduled merges
// ---------------------------------------------------------------------------

struct Stage2Result {
  Tensor tokens;        // [T2,H2,W2,D2] after all blocks/merges
  ClassTokenMap ctmap;  // final class token map
  std::vector<Tensor> last_attns;              // per-window attention of the last block
  std::vector<std::vector<int>> last_posmap;   // grid positions per window of the last block
  std::array<int, 4> last_grid{};              // [T,H,W,D] at the last block
};

/// Runs L2 blocks whose temporal window extent always spans the whole
/// temporal axis. merge_after lists block indices after which the 2x2 patch
/// and class-token-map merges run (one projection pair per merge).
/// shift_parity continues the W/SW-MSA alternation across the stage boundary
/// (pass L1 % 2), so a G=1 pyramid matches a plain depth-(L1+L2) stack.
inline Stage2Result stage2_forward(Tensor x, ClassTokenMap ct,
                                   const std::vector<BlockParams>& blocks, int wh, int ww,
                                   const std::vector<int>& merge_after,
                                   const std::vector<LinearParams>& patch_merge_projs,
                                   const std::vector<LinearParams>& ct_merge_projs,
                                   int shift_parity = 0) {
  detail::require(patch_merge_projs.size() == merge_after.size() &&
                      ct_merge_projs.size() == merge_after.size(),
                  "stage2_forward: one projection pair per scheduled merge");
  Stage2Result r;
  std::size_t merge_at = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const bool shifted = (static_cast<int>(b) + shift_parity) % 2 == 1;
    WindowConfig win{x.dim(0), wh, ww};
    WindowedBlockResult step = windowed_block_forward(x, ct, blocks[b], win, shifted);
    x = step.x;
    ct = step.ctmap;
    if (b + 1 == blocks.size()) {
      r.last_attns = step.attns;
      r.last_posmap = window_position_map(x.dim(0), x.dim(1), x.dim(2), win, shifted);
      r.last_grid = {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    }
    while (merge_at < merge_after.size() &&
           merge_after[merge_at] == static_cast<int>(b)) {
      x = patch_merge(x, patch_merge_projs[merge_at]);
      ct = class_token_map_merge(ct, ct_merge_projs[merge_at]);
      ++merge_at;
    }
  }
  r.tokens = x;
  r.ctmap = ct;
  return r;
}

}  // namespace egovit
